//! Binary dataset container and reconstruction checkpoints.
//!
//! Both formats are a magic tag, a little-endian `u16` version, a fixed
//! header and little-endian `f64` payloads. Complex values are stored as
//! interleaved `re, im`.
//!
//! Container layout after the header
//! `rows cols frames coils spokes_per_frame samples_per_spoke flags` (all
//! `u32`): per-frame coordinates `[kx, ky]`, per-frame samples
//! `[coil][point]`, then, when flagged, template, motion fields
//! (component-major per frame), respiratory signal and coil maps.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::engine::{AdamMoments, Dataset, ReconConfig, ReconState, Stage};
use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, LatentTrajectory};
use crate::image::{CMatrix, ComplexImage, MotionField};
use crate::nudft::SpokeFrame;
use crate::phantom::GroundTruth;

pub const CONTAINER_MAGIC: &[u8; 4] = b"MCSD";
pub const CONTAINER_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCSK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Template, motion and respiratory signal are present.
pub const FLAG_TRUTH: u32 = 1;
/// Coil maps are present.
pub const FLAG_COIL_MAPS: u32 = 2;

/// Upper bound on any single declared section, in values.
const MAX_SECTION: u64 = 1 << 31;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| format_err(format!("{v} does not fit in u32")))?;
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64s(&mut self, values: &[f64]) -> Result<()> {
        for v in values {
            self.bytes(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn complex(&mut self, values: &[Complex64]) -> Result<()> {
        for v in values {
            self.bytes(&v.re.to_le_bytes())?;
            self.bytes(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Length-prefixed `f64` vector.
    fn vec(&mut self, values: &[f64]) -> Result<()> {
        self.u64(values.len() as u64)?;
        self.f64s(values)
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| format_err(format!("truncated input: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n as u64 > MAX_SECTION {
            return Err(format_err(format!("section of {n} values is implausibly large")));
        }
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }

    fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        let raw = self.f64s(2 * n)?;
        Ok(raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n > MAX_SECTION {
            return Err(format_err(format!("section of {n} values is implausibly large")));
        }
        self.f64s(n as usize)
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(format_err("trailing bytes after the last section")),
        }
    }
}

fn check_magic<R: Read>(r: &mut Reader<R>, magic: &[u8; 4], version: u16, what: &str) -> Result<()> {
    let found: [u8; 4] = r.bytes()?;
    if &found != magic {
        return Err(format_err(format!("not a {what}: bad magic {found:?}")));
    }
    let v = r.u16()?;
    if v != version {
        return Err(format_err(format!(
            "{what} version {v} is not supported (expected {version})"
        )));
    }
    Ok(())
}

/// A dataset with optional ground truth, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub dataset: Dataset,
    pub truth: Option<GroundTruth>,
}

impl Container {
    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let d = &self.dataset;
        d.validate()?;
        let mut flags = FLAG_COIL_MAPS;
        if let Some(truth) = &self.truth {
            flags |= FLAG_TRUTH;
            if truth.template.dims() != (d.rows, d.cols)
                || truth.motion.len() != d.num_frames()
                || truth.respiratory_signal.len() != d.num_frames()
                || truth.motion.iter().any(|m| m.dims() != (d.rows, d.cols))
            {
                return Err(format_err("ground truth does not match the dataset"));
            }
        }
        let mut w = Writer { inner: out };
        w.bytes(CONTAINER_MAGIC)?;
        w.u16(CONTAINER_VERSION)?;
        for v in [
            d.rows,
            d.cols,
            d.num_frames(),
            d.coil_maps.len(),
            d.spokes_per_frame,
            d.samples_per_spoke,
        ] {
            w.u32(v)?;
        }
        w.u32(flags as usize)?;
        for frame in &d.frames {
            for k in &frame.coords {
                w.f64s(k)?;
            }
        }
        for frame in &d.frames {
            w.complex(frame.samples.data())?;
        }
        if let Some(truth) = &self.truth {
            w.complex(truth.template.data())?;
            for m in &truth.motion {
                w.f64s(m.data())?;
            }
            w.f64s(&truth.respiratory_signal)?;
        }
        for map in &d.coil_maps {
            w.complex(map.data())?;
        }
        w.inner.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = Reader { inner: input };
        check_magic(&mut r, CONTAINER_MAGIC, CONTAINER_VERSION, "dataset container")?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let frames = r.u32()?;
        let coils = r.u32()?;
        let spokes_per_frame = r.u32()?;
        let samples_per_spoke = r.u32()?;
        let flags = r.u32()? as u32;
        if flags & !(FLAG_TRUTH | FLAG_COIL_MAPS) != 0 {
            return Err(format_err(format!("unknown container flags {flags:#x}")));
        }
        let points = spokes_per_frame * samples_per_spoke;
        let pixels = rows * cols;
        if [rows, cols, frames, coils, points].contains(&0)
            || (frames as u64) * (coils as u64) * (points as u64) > MAX_SECTION
            || pixels as u64 > MAX_SECTION
        {
            return Err(format_err("container header declares empty or oversized sections"));
        }
        let mut coords = Vec::with_capacity(frames);
        for _ in 0..frames {
            let raw = r.f64s(2 * points)?;
            coords.push(raw.chunks_exact(2).map(|p| [p[0], p[1]]).collect::<Vec<_>>());
        }
        let mut frame_list = Vec::with_capacity(frames);
        for (t, coords) in coords.into_iter().enumerate() {
            let samples = CMatrix::from_vec(coils, points, r.complex(coils * points)?)?;
            frame_list.push(SpokeFrame {
                frame_index: t,
                coords,
                samples,
            });
        }
        let truth_sections = if flags & FLAG_TRUTH != 0 {
            let template = ComplexImage::from_vec(rows, cols, r.complex(pixels)?)?;
            let motion = (0..frames)
                .map(|_| MotionField::from_vec(rows, cols, r.f64s(2 * pixels)?))
                .collect::<Result<Vec<_>>>()?;
            let signal = r.f64s(frames)?;
            Some((template, motion, signal))
        } else {
            None
        };
        let coil_maps = if flags & FLAG_COIL_MAPS != 0 {
            (0..coils)
                .map(|_| ComplexImage::from_vec(rows, cols, r.complex(pixels)?))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        r.expect_end()?;
        let truth = truth_sections.map(|(template, motion, respiratory_signal)| GroundTruth {
            template,
            motion,
            respiratory_signal,
            coil_maps: coil_maps.clone(),
        });
        Ok(Self {
            dataset: Dataset {
                rows,
                cols,
                spokes_per_frame,
                samples_per_spoke,
                coil_maps,
                frames: frame_list,
            },
            truth,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Reconstruction state plus the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ReconConfig,
    /// Full-resolution grid size the generator was built for.
    pub grid: usize,
    pub state: ReconState,
}

fn write_moments<W: Write>(w: &mut Writer<W>, m: &AdamMoments) -> Result<()> {
    w.u64(m.step)?;
    w.vec(&m.m)?;
    w.vec(&m.v)
}

fn read_moments<R: Read>(r: &mut Reader<R>, len: usize, what: &str) -> Result<AdamMoments> {
    let step = r.u64()?;
    let m = r.vec()?;
    let v = r.vec()?;
    if m.len() != len || v.len() != len {
        return Err(format_err(format!("{what} moments do not match their variable")));
    }
    Ok(AdamMoments { m, v, step })
}

impl Checkpoint {
    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let json = serde_json::to_string(&self.config)
            .map_err(|e| format_err(format!("config: {e}")))?;
        let s = &self.state;
        let mut w = Writer { inner: out };
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u16(CHECKPOINT_VERSION)?;
        w.u32(json.len())?;
        w.bytes(json.as_bytes())?;
        w.bytes(self.config.hash().as_bytes())?;
        w.u32(self.grid)?;
        w.u8(match s.stage {
            Stage::Coarse => 0,
            Stage::Fine => 1,
        })?;
        w.u64(s.epoch as u64)?;
        w.u32(s.f.rows())?;
        w.u32(s.f.cols())?;
        w.complex(s.f.data())?;
        w.vec(&s.theta.values)?;
        w.u32(s.z.frames())?;
        w.u32(s.z.dim())?;
        w.f64s(s.z.data())?;
        write_moments(&mut w, &s.adam_f)?;
        write_moments(&mut w, &s.adam_theta)?;
        write_moments(&mut w, &s.adam_z)?;
        w.vec(&s.loss_history)?;
        w.inner.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = Reader { inner: input };
        check_magic(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
        let json_len = r.u32()?;
        if json_len > 1 << 20 {
            return Err(format_err("config section too large"));
        }
        let mut json = vec![0u8; json_len];
        r.inner
            .read_exact(&mut json)
            .map_err(|e| format_err(format!("truncated config: {e}")))?;
        let config: ReconConfig = serde_json::from_slice(&json)
            .map_err(|e| format_err(format!("config: {e}")))?;
        let hash: [u8; 16] = r.bytes()?;
        if hash != config.hash().as_bytes() {
            return Err(format_err("config hash does not match the stored config"));
        }
        let grid = r.u32()?;
        let stage = match r.u8()? {
            0 => Stage::Coarse,
            1 => Stage::Fine,
            other => return Err(format_err(format!("unknown stage tag {other}"))),
        };
        let epoch = r.u64()? as usize;
        let rows = r.u32()?;
        let cols = r.u32()?;
        if rows as u64 * cols as u64 > MAX_SECTION {
            return Err(format_err("template too large"));
        }
        let f = ComplexImage::from_vec(rows, cols, r.complex(rows * cols)?)?;
        let gen = config.generator_config(grid);
        let theta = GeneratorParams::from_values(gen, r.vec()?)?;
        let frames = r.u32()?;
        let dim = r.u32()?;
        if frames as u64 * dim as u64 > MAX_SECTION {
            return Err(format_err("latent trajectory too large"));
        }
        let z = LatentTrajectory::from_vec(frames, dim, r.f64s(frames * dim)?)?;
        let adam_f = read_moments(&mut r, 2 * rows * cols, "template")?;
        let adam_theta = read_moments(&mut r, theta.len(), "generator")?;
        let adam_z = read_moments(&mut r, frames * dim, "latent")?;
        let loss_history = r.vec()?;
        r.expect_end()?;
        Ok(Self {
            config,
            grid,
            state: ReconState {
                f,
                theta,
                z,
                adam_f,
                adam_theta,
                adam_z,
                epoch,
                stage,
                loss_history,
            },
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Solver;
    use crate::nudft::Ordering;
    use crate::phantom::PhantomSpec;
    use crate::simulation::simulate;
    use proptest::prelude::*;

    fn spec(seed: u64) -> PhantomSpec {
        PhantomSpec {
            grid_size: 32,
            num_frames: 3,
            spokes_per_frame: 2,
            samples_per_spoke: 8,
            num_coils: 2,
            breathing_period: 3.0,
            breathing_amplitude: 2.0,
            noise_sigma: 0.5,
            seed,
        }
    }

    fn container(seed: u64, with_truth: bool) -> Container {
        let sim = simulate(&spec(seed), Ordering::GoldenAngle, None).unwrap();
        Container {
            truth: with_truth.then(|| sim.truth.clone()),
            dataset: sim.dataset,
        }
    }

    fn bytes(c: &Container) -> Vec<u8> {
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn header_layout() {
        let c = container(1, false);
        let buf = bytes(&c);
        assert_eq!(&buf[..4], b"MCSD");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        let field = |i: usize| u32::from_le_bytes(buf[6 + 4 * i..10 + 4 * i].try_into().unwrap());
        assert_eq!((0..7).map(field).collect::<Vec<_>>(), vec![32, 32, 3, 2, 2, 8, FLAG_COIL_MAPS]);
        let payload = 3 * 16 * 2 + 3 * 2 * 16 * 2 + 2 * 32 * 32 * 2;
        assert_eq!(buf.len(), 34 + 8 * payload);
        // First coordinate is the first sample of the first spoke.
        let k0 = f64::from_le_bytes(buf[34..42].try_into().unwrap());
        assert_eq!(k0, c.dataset.frames[0].coords[0][0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn container_round_trip_is_exact(seed in 0u64..1000, with_truth in any::<bool>()) {
            let c = container(seed, with_truth);
            let back = Container::read_from(bytes(&c).as_slice()).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(bytes(&back), bytes(&c));
        }
    }

    #[test]
    fn version_and_corruption_rejected() {
        let mut buf = bytes(&container(2, true));
        let good = buf.clone();
        buf[4] = 9;
        match Container::read_from(buf.as_slice()) {
            Err(Error::Format(msg)) => assert!(msg.contains("version 9"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(Container::read_from(bad_magic.as_slice()).is_err());
        assert!(Container::read_from(&good[..good.len() - 3]).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(Container::read_from(trailing.as_slice()).is_err());
        let mut flags = good;
        flags[30] = 0x80;
        assert!(Container::read_from(flags.as_slice()).is_err());
    }

    fn small_checkpoint() -> Checkpoint {
        let sim = simulate(&spec(3), Ordering::GoldenAngle, None).unwrap();
        let config = ReconConfig {
            epochs_coarse: 1,
            epochs_fine: 1,
            ..ReconConfig::default()
        };
        let solver = Solver::new(&sim.dataset, config.clone()).unwrap();
        let mut state = solver.initial_state().unwrap();
        solver.run(&mut state, |_| {}).unwrap();
        Checkpoint {
            config,
            grid: 32,
            state,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let ck = small_checkpoint();
        let buf = ck.to_bytes().unwrap();
        assert_eq!(&buf[..4], b"MCSK");
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), buf);
    }

    #[test]
    fn checkpoint_with_tampered_config_rejected() {
        let buf = small_checkpoint().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&buf).into_owned();
        let at = text.find("\"seed\":0").expect("seed in config json");
        let mut tampered = buf.clone();
        tampered[at + 7] = b'1';
        match Checkpoint::read_from(tampered.as_slice()) {
            Err(Error::Format(msg)) => assert!(msg.contains("hash"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let mut version = buf;
        version[4] = 2;
        assert!(Checkpoint::read_from(version.as_slice()).is_err());
    }
}
