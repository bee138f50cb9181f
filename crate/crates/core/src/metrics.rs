//! Aggregation of evaluation reports into the coverage / tested-OOI /
//! success-rate summary and CSV series.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::imitation::Verdict;
use crate::ppo::EpisodeReport;
use crate::world::World;
use crate::{PpgtaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    /// Visited pathway tiles / total pathway tiles, in percent.
    pub coverage_pct: f64,
    pub oois_tested: usize,
    pub total_oois: usize,
    /// Successful tests / total OOIs (unreachable ones included).
    pub success_rate: f64,
    /// Per-type detector AP, when a detector evaluation ran.
    pub per_type_ap: BTreeMap<u8, f64>,
    /// Cumulative tested-OOI count after each episode.
    pub tested_per_episode: Vec<usize>,
}

pub fn aggregate_metrics(reports: &[EpisodeReport], world: &World) -> Result<MetricsSummary> {
    let mut seen_episodes = BTreeSet::new();
    for r in reports {
        if !seen_episodes.insert(r.episode) {
            return Err(PpgtaError::Contract(format!(
                "duplicate episode id {} in report set",
                r.episode
            )));
        }
    }

    let path_tiles: BTreeSet<(i32, i32)> = world.path_tiles().into_iter().collect();
    let mut visited_paths: BTreeSet<(i32, i32)> = BTreeSet::new();
    let mut tested: BTreeSet<u32> = BTreeSet::new();
    let mut succeeded: BTreeSet<u32> = BTreeSet::new();
    let mut tested_per_episode = Vec::with_capacity(reports.len());
    for r in reports {
        visited_paths.extend(r.visited.iter().filter(|t| path_tiles.contains(t)));
        for t in &r.tests {
            tested.insert(t.ooi);
            if t.verdict == Verdict::Success {
                succeeded.insert(t.ooi);
            }
        }
        tested_per_episode.push(tested.len());
    }

    let total_oois = world.oois.len();
    let coverage_pct = if path_tiles.is_empty() {
        0.0
    } else {
        100.0 * visited_paths.len() as f64 / path_tiles.len() as f64
    };
    let success_rate = if total_oois == 0 {
        0.0
    } else {
        succeeded.len() as f64 / total_oois as f64
    };
    Ok(MetricsSummary {
        coverage_pct,
        oois_tested: tested.len(),
        total_oois,
        success_rate,
        per_type_ap: BTreeMap::new(),
        tested_per_episode,
    })
}

impl MetricsSummary {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            writeln!(w, "metric,value")?;
            writeln!(w, "coverage_pct,{:.4}", self.coverage_pct)?;
            writeln!(w, "oois_tested,{}", self.oois_tested)?;
            writeln!(w, "total_oois,{}", self.total_oois)?;
            writeln!(w, "success_rate,{:.4}", self.success_rate)?;
            for (ty, ap) in &self.per_type_ap {
                writeln!(w, "ap_type_{ty},{ap:.4}")?;
            }
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Fig.-7-style cumulative tested-OOI series.
    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            writeln!(w, "episode,tested_oois")?;
            for (i, n) in self.tested_per_episode.iter().enumerate() {
                writeln!(w, "{i},{n}")?;
            }
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::TestRecord;
    use crate::world::{generate_world, WorldSpec};

    fn report(episode: usize, visited: &[(i32, i32)], tests: Vec<TestRecord>) -> EpisodeReport {
        EpisodeReport {
            episode,
            spawn: visited[0],
            visited: visited.iter().copied().collect(),
            tests,
            steps: Vec::new(),
        }
    }

    #[test]
    fn counts_are_exact() {
        let world = generate_world(&WorldSpec::default()).unwrap();
        let paths = world.path_tiles();
        let off_path = (-5, -5);
        let reports = vec![
            report(
                0,
                &[paths[0], paths[1], off_path],
                vec![TestRecord { ooi: 2, js: 0.1, verdict: Verdict::Success }],
            ),
            report(
                1,
                &[paths[1], paths[2]],
                vec![
                    TestRecord { ooi: 2, js: 0.2, verdict: Verdict::Failed },
                    TestRecord { ooi: 5, js: 0.9, verdict: Verdict::Failed },
                ],
            ),
        ];
        let m = aggregate_metrics(&reports, &world).unwrap();
        assert!((m.coverage_pct - 100.0 * 3.0 / paths.len() as f64).abs() < 1e-9);
        assert_eq!(m.oois_tested, 2);
        assert_eq!(m.total_oois, world.oois.len());
        assert!((m.success_rate - 1.0 / world.oois.len() as f64).abs() < 1e-9);
        assert_eq!(m.tested_per_episode, vec![1, 2]);
    }

    #[test]
    fn duplicate_episode_ids_are_rejected() {
        let world = generate_world(&WorldSpec::default()).unwrap();
        let t = world.path_tiles()[0];
        let reports = vec![report(3, &[t], Vec::new()), report(3, &[t], Vec::new())];
        assert!(matches!(
            aggregate_metrics(&reports, &world),
            Err(PpgtaError::Contract(_))
        ));
    }

    #[test]
    fn csv_outputs_are_well_formed() {
        let world = generate_world(&WorldSpec::default()).unwrap();
        let t = world.path_tiles()[0];
        let m = aggregate_metrics(&[report(0, &[t], Vec::new())], &world).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("metrics.csv");
        let p2 = dir.path().join("series.csv");
        m.write_csv(&p1).unwrap();
        m.write_series_csv(&p2).unwrap();
        let body = std::fs::read_to_string(&p1).unwrap();
        assert!(body.starts_with("metric,value\n"));
        assert!(body.contains("oois_tested,0"));
        let series = std::fs::read_to_string(&p2).unwrap();
        assert_eq!(series, "episode,tested_oois\n0,0\n");
    }
}
