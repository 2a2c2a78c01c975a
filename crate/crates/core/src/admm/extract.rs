use super::{
    binarize_state, dual_update, primal_step, proximal_step, shrink_library, AdmmState,
    Assignment,
};
use crate::nn::{Dataset, Network, TrainConfig};
use crate::pattern::{enumerate_candidate_masks, CANDIDATE_COUNT};
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Library shrink plan: the sequence of K values, how many SGD epochs back
/// each primal step, and how many full ADMM iterations to run at the final
/// K before binarizing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractionSchedule {
    pub k_targets: Vec<usize>,
    pub epochs_per_step: usize,
    pub admm_iters_final: usize,
}

impl Default for ExtractionSchedule {
    fn default() -> Self {
        ExtractionSchedule {
            k_targets: vec![CANDIDATE_COUNT, 12, 8],
            epochs_per_step: 2,
            admm_iters_final: 10,
        }
    }
}

impl ExtractionSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.k_targets.first() != Some(&CANDIDATE_COUNT) {
            return Err(Error::Infeasible(format!(
                "schedule must start at {CANDIDATE_COUNT}, got {:?}",
                self.k_targets
            )));
        }
        if !self.k_targets.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Infeasible(format!(
                "schedule must be strictly decreasing, got {:?}",
                self.k_targets
            )));
        }
        let last = *self.k_targets.last().unwrap();
        if ![12, 8, 4].contains(&last) {
            return Err(Error::Infeasible(format!(
                "final library size must be 12, 8 or 4, got {last}"
            )));
        }
        if self.epochs_per_step == 0 || self.admm_iters_final == 0 {
            return Err(Error::Infeasible(
                "epochs_per_step and admm_iters_final must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Parses a comma-separated K list, e.g. "126,12,8".
    pub fn parse_targets(text: &str) -> Result<Vec<usize>> {
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Infeasible(format!("bad schedule entry {s:?}: {e}")))
            })
            .collect()
    }
}

/// One row of the extraction log. Histogram rows carry the per-pattern
/// occurrence counts (bitmap, count) observed just before a shrink, and at
/// the end of the run.
#[derive(Clone, Debug)]
pub struct LogRow {
    pub step: usize,
    pub k: usize,
    pub epoch: usize,
    pub loss: f64,
    pub residual: f64,
    pub histogram: Option<Vec<(u16, u32)>>,
}

#[derive(Clone, Debug, Default)]
pub struct ExtractionLog {
    pub rows: Vec<LogRow>,
}

impl ExtractionLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,k,epoch,loss,residual,histogram\n");
        for r in &self.rows {
            let hist = r
                .histogram
                .as_ref()
                .map(|h| {
                    h.iter()
                        .map(|(bits, count)| format!("{bits}:{count}"))
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{}\n",
                r.step, r.k, r.epoch, r.loss, r.residual, hist
            ));
        }
        out
    }

    /// Residuals of the final-K ADMM iterations, in order.
    pub fn final_residuals(&self) -> Vec<f64> {
        let last_step = self.rows.iter().map(|r| r.step).max().unwrap_or(0);
        self.rows
            .iter()
            .filter(|r| r.step == last_step && r.histogram.is_none())
            .map(|r| r.residual)
            .collect()
    }

    /// The histogram logged at the given step, if any.
    pub fn histogram_at_step(&self, step: usize) -> Option<&[(u16, u32)]> {
        self.rows
            .iter()
            .find(|r| r.step == step && r.histogram.is_some())
            .and_then(|r| r.histogram.as_deref())
    }
}

/// Outcome of a full extraction run.
pub struct ExtractionResult {
    pub library: crate::pattern::PatternLibrary,
    pub assignment: Assignment,
    pub log: ExtractionLog,
}

/// Runs the full shrink loop over `schedule.k_targets`, starting from the
/// 126 candidates. Each transition is one ADMM iteration (primal SGD with
/// the proximal pull, simplex projection, dual ascent) followed by an
/// occurrence count and a shrink. At the final K, `admm_iters_final` full
/// iterations run before the per-kernel selections are binarized and the
/// winning masks are hard-applied to `net`. The run is a pure function of
/// (net, data, schedule, rho, cfg, rng-state).
pub fn extract_pattern_library(
    net: &mut Network,
    data: &Dataset,
    schedule: &ExtractionSchedule,
    rho: f64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ExtractionResult> {
    schedule.validate()?;
    for conv in net.conv_layers() {
        let s = conv.weights.shape();
        if s[2] != 3 || s[3] != 3 {
            return Err(Error::ShapeMismatch {
                context: "extraction requires 3x3 kernels",
                left: s.to_vec(),
                right: vec![s[0], s[1], 3, 3],
            });
        }
    }

    let mut state = AdmmState::init(net, enumerate_candidate_masks(), rho)?;
    let mut log = ExtractionLog::default();

    // shrink transitions
    for (step, &target) in schedule.k_targets.iter().enumerate().skip(1) {
        let stats = primal_step(net, &mut state, data, schedule.epochs_per_step, cfg, rng)?;
        proximal_step(&mut state)?;
        dual_update(&mut state);
        for (epoch, s) in stats.iter().enumerate() {
            log.rows.push(LogRow {
                step: step - 1,
                k: state.library.k(),
                epoch,
                loss: s.task_loss,
                residual: state.residual(),
                histogram: None,
            });
        }
        let assignment = binarize_state(&state);
        log.rows.push(LogRow {
            step: step - 1,
            k: state.library.k(),
            epoch: schedule.epochs_per_step,
            loss: stats.last().map(|s| s.task_loss).unwrap_or(f64::NAN),
            residual: state.residual(),
            histogram: Some(histogram_pairs(&state, &assignment)),
        });
        let smaller = shrink_library(&state.library, &assignment, target)?;
        state.restrict_to(&smaller)?;
    }

    // final-K ADMM iterations
    let final_step = schedule.k_targets.len() - 1;
    for iter in 0..schedule.admm_iters_final {
        let stats = primal_step(net, &mut state, data, schedule.epochs_per_step, cfg, rng)?;
        proximal_step(&mut state)?;
        dual_update(&mut state);
        log.rows.push(LogRow {
            step: final_step,
            k: state.library.k(),
            epoch: iter,
            loss: stats.last().map(|s| s.task_loss).unwrap_or(f64::NAN),
            residual: state.residual(),
            histogram: None,
        });
    }

    let assignment = binarize_state(&state);
    let last_loss = log
        .rows
        .last()
        .map(|r| r.loss)
        .unwrap_or_default();
    log.rows.push(LogRow {
        step: final_step,
        k: state.library.k(),
        epoch: schedule.admm_iters_final,
        loss: last_loss,
        residual: state.residual(),
        histogram: Some(histogram_pairs(&state, &assignment)),
    });

    // hard-apply the winning masks
    super::hard_masks(&state.library, &assignment, None)?.apply(net)?;

    Ok(ExtractionResult {
        library: state.library,
        assignment,
        log,
    })
}

fn histogram_pairs(state: &AdmmState, assignment: &Assignment) -> Vec<(u16, u32)> {
    let counts = assignment.histogram(state.library.k());
    state
        .library
        .masks()
        .iter()
        .zip(counts)
        .map(|(m, c)| (m.bits(), c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::KERNEL_AREA;
    use rand::SeedableRng;

    #[test]
    fn schedule_validation() {
        assert!(ExtractionSchedule::default().validate().is_ok());
        let bad = ExtractionSchedule {
            k_targets: vec![126, 12, 12],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExtractionSchedule {
            k_targets: vec![126, 5],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExtractionSchedule {
            k_targets: vec![64, 8],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(
            ExtractionSchedule::parse_targets("126, 12,8").unwrap(),
            vec![126, 12, 8]
        );
    }

    #[test]
    fn tiny_extraction_reaches_target_and_hard_masks() {
        let mut net = Network::toy(1, 2, (8, 8), 17);
        let data = Dataset::synthetic_blobs(64, 2, (8, 8), 0.05, 18);
        let schedule = ExtractionSchedule {
            k_targets: vec![126, 4],
            epochs_per_step: 1,
            admm_iters_final: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let result = extract_pattern_library(
            &mut net,
            &data,
            &schedule,
            0.05,
            &TrainConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(result.library.k(), 4);
        for layer in &result.assignment.per_layer {
            assert!(layer.iter().all(|&idx| (idx as usize) < 4));
        }
        // every kernel is zero outside its assigned mask
        for (conv, assigned) in net.conv_layers().iter().zip(&result.assignment.per_layer) {
            for (n, &idx) in assigned.iter().enumerate() {
                let (f, c) = (n / conv.channels(), n % conv.channels());
                let mask = result.library.mask(idx as usize);
                for i in 0..KERNEL_AREA {
                    if mask.bits() & (1 << i) == 0 {
                        assert_eq!(conv.kernel(f, c)[i], 0.0);
                    }
                }
            }
        }
        // csv has a histogram row per shrink plus the final one
        let csv = result.log.to_csv();
        let hist_rows = csv.lines().filter(|l| l.contains(':')).count();
        assert_eq!(hist_rows, 2);
    }

    #[test]
    fn extraction_is_deterministic() {
        let run = || {
            let mut net = Network::toy(1, 2, (8, 8), 7);
            let data = Dataset::synthetic_blobs(48, 2, (8, 8), 0.05, 8);
            let schedule = ExtractionSchedule {
                k_targets: vec![126, 4],
                epochs_per_step: 1,
                admm_iters_final: 1,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let r = extract_pattern_library(
                &mut net,
                &data,
                &schedule,
                0.05,
                &TrainConfig::default(),
                &mut rng,
            )
            .unwrap();
            (r.library, r.assignment, net)
        };
        let (lib_a, asg_a, net_a) = run();
        let (lib_b, asg_b, net_b) = run();
        assert_eq!(lib_a, lib_b);
        assert_eq!(asg_a, asg_b);
        assert_eq!(net_a, net_b);
    }
}
