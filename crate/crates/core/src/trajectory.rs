//! Demonstration trajectories and their on-disk corpus format.
//!
//! Trajectory file: header (magic "PTRJ", version, frame extents, expert
//! kind, seed, world seed) followed by per-step records (action u8 + raw RGB
//! payload). A corpus is a directory with an `index.txt` listing members and
//! their split assignment.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{PpgtaError, Result};
use crate::world::Frame;

const MAGIC: &[u8; 4] = b"PTRJ";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExpertKind {
    PathFollow,
    OrbitTest,
}

impl ExpertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpertKind::PathFollow => "path-follow",
            ExpertKind::OrbitTest => "orbit-test",
        }
    }
}

/// Ordered (frame, action) pairs: `steps[t]` holds the observation s_t and
/// the action a_t taken from it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: ExpertKind,
    pub seed: u64,
    pub world_seed: u64,
    pub steps: Vec<(Frame, u8)>,
}

impl Trajectory {
    pub fn actions(&self) -> Vec<u8> {
        self.steps.iter().map(|(_, a)| *a).collect()
    }
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let (w, h) = traj
        .steps
        .first()
        .map(|(f, _)| (f.width, f.height))
        .unwrap_or((0, 0));
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(w as u16).to_le_bytes())?;
        out.write_all(&(h as u16).to_le_bytes())?;
        out.write_all(&[match traj.kind {
            ExpertKind::PathFollow => 0u8,
            ExpertKind::OrbitTest => 1,
        }])?;
        out.write_all(&traj.seed.to_le_bytes())?;
        out.write_all(&traj.world_seed.to_le_bytes())?;
        out.write_all(&(traj.steps.len() as u32).to_le_bytes())?;
        for (frame, action) in &traj.steps {
            out.write_all(&[*action])?;
            out.write_all(&frame.pixels)?;
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let corrupt = |reason: &str| PpgtaError::CorruptFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(|_| corrupt("truncated version"))?;
    if u16::from_le_bytes(b2) != VERSION {
        return Err(corrupt("unsupported version"));
    }
    r.read_exact(&mut b2).map_err(|_| corrupt("truncated width"))?;
    let w = u16::from_le_bytes(b2) as usize;
    r.read_exact(&mut b2).map_err(|_| corrupt("truncated height"))?;
    let h = u16::from_le_bytes(b2) as usize;
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1).map_err(|_| corrupt("truncated kind"))?;
    let kind = match b1[0] {
        0 => ExpertKind::PathFollow,
        1 => ExpertKind::OrbitTest,
        _ => return Err(corrupt("unknown expert kind")),
    };
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| corrupt("truncated seed"))?;
    let seed = u64::from_le_bytes(b8);
    r.read_exact(&mut b8).map_err(|_| corrupt("truncated world seed"))?;
    let world_seed = u64::from_le_bytes(b8);
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| corrupt("truncated step count"))?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b1).map_err(|_| corrupt("truncated step record"))?;
        let action = b1[0];
        if action > 8 {
            return Err(corrupt("action id out of range"));
        }
        let mut pixels = vec![0u8; w * h * 3];
        r.read_exact(&mut pixels).map_err(|_| corrupt("truncated frame payload"))?;
        steps.push((Frame { width: w, height: h, pixels }, action));
    }
    Ok(Trajectory { kind, seed, world_seed, steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// 70/10/20 split boundaries at trajectory granularity.
pub fn split_assignment(n: usize) -> Vec<Split> {
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    (0..n)
        .map(|i| {
            if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect()
}

/// A persisted corpus: trajectory files plus an index with split labels.
pub struct Corpus {
    pub dir: PathBuf,
    pub members: Vec<(String, Split)>,
}

pub fn save_corpus(dir: &Path, trajectories: &[Trajectory]) -> Result<Corpus> {
    std::fs::create_dir_all(dir)?;
    // split 70/10/20 within each expert kind so per-kind training always has
    // all three splits
    let mut splits = vec![Split::Train; trajectories.len()];
    let kinds: BTreeSet<ExpertKind> = trajectories.iter().map(|t| t.kind).collect();
    for kind in kinds {
        let members: Vec<usize> = trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind == kind)
            .map(|(i, _)| i)
            .collect();
        for (i, s) in members.iter().zip(split_assignment(members.len())) {
            splits[*i] = s;
        }
    }
    let mut members = Vec::new();
    for (i, traj) in trajectories.iter().enumerate() {
        let name = format!("{}_{i:04}.ptrj", traj.kind.as_str());
        save_trajectory(traj, &dir.join(&name))?;
        members.push((name, splits[i]));
    }
    let tmp = dir.join("index.txt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for (name, split) in &members {
            writeln!(w, "{} {}", name, split.as_str())?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, dir.join("index.txt"))?;
    Ok(Corpus { dir: dir.to_path_buf(), members })
}

pub fn load_corpus(dir: &Path) -> Result<Vec<(Trajectory, Split)>> {
    let index = dir.join("index.txt");
    let corrupt = |reason: String| PpgtaError::CorruptFile {
        path: index.display().to_string(),
        reason,
    };
    let file = File::open(&index)
        .map_err(|_| PpgtaError::MissingArtifact(index.display().to_string()))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| corrupt("empty index line".into()))?;
        let split = match parts.next() {
            Some("train") => Split::Train,
            Some("val") => Split::Val,
            Some("test") => Split::Test,
            other => return Err(corrupt(format!("bad split label {other:?}"))),
        };
        out.push((load_trajectory(&dir.join(name))?, split));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(kind: ExpertKind, seed: u64, n: usize) -> Trajectory {
        let steps = (0..n)
            .map(|t| {
                let mut f = Frame::new(4, 3);
                f.pixels.iter_mut().enumerate().for_each(|(i, p)| *p = (i + t) as u8);
                (f, (t % 9) as u8)
            })
            .collect();
        Trajectory { kind, seed, world_seed: 99, steps }
    }

    #[test]
    fn split_assignment_is_70_10_20() {
        let s = split_assignment(10);
        assert_eq!(s.iter().filter(|x| **x == Split::Train).count(), 7);
        assert_eq!(s.iter().filter(|x| **x == Split::Val).count(), 1);
        assert_eq!(s.iter().filter(|x| **x == Split::Test).count(), 2);
    }

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ptrj");
        let traj = sample(ExpertKind::OrbitTest, 5, 6);
        save_trajectory(&traj, &path).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(back.kind, traj.kind);
        assert_eq!(back.seed, 5);
        assert_eq!(back.world_seed, 99);
        assert_eq!(back.actions(), traj.actions());
        for ((fa, _), (fb, _)) in back.steps.iter().zip(&traj.steps) {
            assert_eq!(fa.pixels, fb.pixels);
        }
    }

    #[test]
    fn out_of_range_action_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ptrj");
        save_trajectory(&sample(ExpertKind::PathFollow, 1, 3), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // first action byte sits right after the 29-byte header
        bytes[29] = 9;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_trajectory(&path),
            Err(PpgtaError::CorruptFile { .. })
        ));
    }

    #[test]
    fn corpus_splits_within_each_expert_kind() {
        let dir = tempfile::tempdir().unwrap();
        let mut trajs: Vec<Trajectory> =
            (0..10).map(|i| sample(ExpertKind::OrbitTest, i, 3)).collect();
        trajs.extend((0..10).map(|i| sample(ExpertKind::PathFollow, i, 3)));
        save_corpus(dir.path(), &trajs).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.len(), 20);
        for kind in [ExpertKind::OrbitTest, ExpertKind::PathFollow] {
            let of_kind: Vec<Split> = loaded
                .iter()
                .filter(|(t, _)| t.kind == kind)
                .map(|(_, s)| *s)
                .collect();
            assert_eq!(of_kind.iter().filter(|s| **s == Split::Train).count(), 7);
            assert_eq!(of_kind.iter().filter(|s| **s == Split::Val).count(), 1);
            assert_eq!(of_kind.iter().filter(|s| **s == Split::Test).count(), 2);
        }
    }

    #[test]
    fn bad_index_line_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("index.txt"), "foo.ptrj nonsense\n").unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(PpgtaError::CorruptFile { .. })
        ));
    }
}
