//! Run configuration, read from a flat INI file.
//!
//! ```ini
//! [run]
//! seed = 7                  ; global seed; synthetic and model seeds default to it
//! speed_factor = 0          ; 0 = as fast as possible, 1 = capture time
//! workers = 1               ; packet-path shards
//! chunk_ms = 100            ; virtual-time step between trainer rounds
//!
//! [input]                   ; either this section ...
//! pcap = traffic.pcap
//! labels = traffic.csv
//!
//! [synthetic]               ; ... or this one
//! flows = 60                ; split evenly over AR, CG and other
//! ar_flows = 20             ; per-class overrides
//! duration_s = 30
//! seed = 7
//! drift_other_fps = 50      ; "other" flows switch profile at drift_at_s
//! drift_other_frame_size = 9000
//! drift_at_s = 15           ; default: half the duration
//!
//! [extractor]
//! window = 30
//! idle_timeout_s = 30
//!
//! [model]
//! kind = rf                 ; rf or dt
//! n_trees = 20
//! max_depth = 12
//! min_samples_split = 4
//! features_per_split = 3
//! bootstrap = true
//! seed = 7
//! initial = model.posm      ; serve this envelope instead of bootstrapping
//! warmup_fraction = 0.2     ; share of labeled windows used to bootstrap
//!
//! [retrain]
//! enabled = true
//! min_new_samples = 500
//! accuracy_floor = 0.9
//! moving_window = 200
//! min_interval_s = 10
//! recency_weight = 2
//! replay_capacity = 5000
//! pending_ttl_s = 60
//!
//! [labels]
//! latency_ms = 0
//! reemit_interval_s = 5     ; unset: one label per flow per run
//!
//! [report]
//! text = report.txt
//! kv = report.kv
//! decisions = decisions.csv
//! misroutes = misroutes.csv
//! ```
//!
//! Relative paths resolve against the config file's directory. Unknown
//! sections or keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, Properties};

use super::HarnessError;
use crate::features::ExtractorConfig;
use crate::forest::{ModelKind, TrainParams};
use crate::model::ClassLabel;
use crate::pcap::{FlowGroup, SynthPlan, TrafficProfile};
use crate::trainer::{RetrainPolicy, TrainerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct OtherDrift {
    pub at_s: f64,
    pub frame_rate_hz: f64,
    pub frame_size_mean_bytes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInput {
    pub seed: u64,
    pub duration_s: f64,
    /// Flow counts indexed by class.
    pub flows: [usize; ClassLabel::COUNT],
    pub drift: Option<OtherDrift>,
}

impl SyntheticInput {
    pub fn plan(&self) -> SynthPlan {
        let mut plan = SynthPlan::new(self.seed, self.duration_s);
        for label in ClassLabel::ALL {
            let n = self.flows[label.index()];
            let base = TrafficProfile::for_label(label);
            let group = match (&self.drift, label) {
                (Some(d), ClassLabel::Other) => {
                    let after = TrafficProfile {
                        frame_rate_hz: d.frame_rate_hz,
                        frame_size_mean_bytes: d.frame_size_mean_bytes,
                        ..base.clone()
                    };
                    FlowGroup::drifting(base, after, (d.at_s * 1e6).round() as u64, n)
                }
                _ => FlowGroup::steady(base, n),
            };
            plan = plan.with_group(group);
        }
        plan
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Pcap { pcap: PathBuf, labels: PathBuf },
    Synthetic(SyntheticInput),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportPaths {
    pub text: Option<PathBuf>,
    pub kv: Option<PathBuf>,
    pub decisions: Option<PathBuf>,
    pub misroutes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: InputSource,
    pub extractor: ExtractorConfig,
    pub trainer: TrainerConfig,
    pub retrain_enabled: bool,
    /// Envelope to serve from the start; otherwise a warmup slice trains v1.
    pub initial_model: Option<PathBuf>,
    pub warmup_fraction: f64,
    pub speed_factor: f64,
    pub label_latency_us: u64,
    pub reemit_interval_us: Option<u64>,
    pub workers: usize,
    pub chunk_us: u64,
    pub report: ReportPaths,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults around a synthetic input.
    pub fn synthetic(input: SyntheticInput) -> Self {
        let seed = input.seed;
        Self {
            input: InputSource::Synthetic(input),
            extractor: ExtractorConfig::default(),
            trainer: TrainerConfig {
                params: TrainParams {
                    seed,
                    ..TrainParams::default()
                },
                ..TrainerConfig::default()
            },
            retrain_enabled: true,
            initial_model: None,
            warmup_fraction: 0.2,
            speed_factor: 0.0,
            label_latency_us: 0,
            reemit_interval_us: None,
            workers: 1,
            chunk_us: 100_000,
            report: ReportPaths::default(),
            seed,
        }
    }

    /// The "other" class switching to 50 fps / 9000 B frames halfway
    /// through a run of `duration_s` seconds.
    pub fn drift_scenario(seed: u64, flows_per_class: usize, duration_s: f64) -> Self {
        Self::synthetic(SyntheticInput {
            seed,
            duration_s,
            flows: [flows_per_class; 3],
            drift: Some(OtherDrift {
                at_s: duration_s / 2.0,
                frame_rate_hz: 50.0,
                frame_size_mean_bytes: 9_000.0,
            }),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_ini_str(&text, base)
    }

    pub fn from_ini_str(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| cfg(format!("{e}")))?;
        let mut sections = Sections::new(&ini)?;

        let run = sections.take("run", &["seed", "speed_factor", "workers", "chunk_ms"])?;
        let seed: u64 = run.get_or("seed", 0)?;

        let path = |p: &str| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        let pcap_sec = sections.take("input", &["pcap", "labels"])?;
        let synth_sec = sections.take(
            "synthetic",
            &[
                "flows",
                "ar_flows",
                "cg_flows",
                "other_flows",
                "duration_s",
                "seed",
                "drift_other_fps",
                "drift_other_frame_size",
                "drift_at_s",
            ],
        )?;
        let input = match (pcap_sec.present, synth_sec.present) {
            (true, true) => return Err(cfg("give either [input] or [synthetic], not both")),
            (false, false) => return Err(cfg("no input: add an [input] or [synthetic] section")),
            (true, false) => InputSource::Pcap {
                pcap: path(pcap_sec.require("pcap")?),
                labels: path(pcap_sec.require("labels")?),
            },
            (false, true) => {
                let total: usize = synth_sec.get_or("flows", 0)?;
                let even = total / 3;
                let mut flows = [even; 3];
                for n in flows.iter_mut().take(total % 3) {
                    *n += 1;
                }
                for (label, key) in [(ClassLabel::Ar, "ar_flows"), (ClassLabel::Cg, "cg_flows"), (ClassLabel::Other, "other_flows")] {
                    if let Some(n) = synth_sec.get(key)? {
                        flows[label.index()] = n;
                    }
                }
                let duration_s: f64 = synth_sec.get_or("duration_s", 30.0)?;
                let fps: Option<f64> = synth_sec.get("drift_other_fps")?;
                let size: Option<f64> = synth_sec.get("drift_other_frame_size")?;
                let drift = if fps.is_some() || size.is_some() {
                    let other = TrafficProfile::other();
                    Some(OtherDrift {
                        at_s: synth_sec.get_or("drift_at_s", duration_s / 2.0)?,
                        frame_rate_hz: fps.unwrap_or(other.frame_rate_hz),
                        frame_size_mean_bytes: size.unwrap_or(other.frame_size_mean_bytes),
                    })
                } else {
                    if synth_sec.get::<f64>("drift_at_s")?.is_some() {
                        return Err(cfg("[synthetic] drift_at_s needs drift_other_fps or drift_other_frame_size"));
                    }
                    None
                };
                InputSource::Synthetic(SyntheticInput {
                    seed: synth_sec.get_or("seed", seed)?,
                    duration_s,
                    flows,
                    drift,
                })
            }
        };

        let ex = sections.take("extractor", &["window", "idle_timeout_s"])?;
        let extractor = ExtractorConfig {
            window: ex.get_or("window", crate::features::DEFAULT_WINDOW)?,
            idle_timeout_us: secs_to_us(ex.get_or("idle_timeout_s", 30.0)?)?,
        };

        let m = sections.take(
            "model",
            &[
                "kind",
                "n_trees",
                "max_depth",
                "min_samples_split",
                "features_per_split",
                "bootstrap",
                "seed",
                "initial",
                "warmup_fraction",
            ],
        )?;
        let kind: ModelKind = m.get_or("kind", ModelKind::Forest)?;
        let d = TrainParams::for_kind(kind);
        let params = TrainParams {
            max_depth: m.get_or("max_depth", d.max_depth)?,
            min_samples_split: m.get_or("min_samples_split", d.min_samples_split)?,
            n_trees: m.get_or("n_trees", d.n_trees)?,
            features_per_split: m.get_or("features_per_split", d.features_per_split)?,
            bootstrap: m.get_or("bootstrap", d.bootstrap)?,
            seed: m.get_or("seed", seed)?,
        };

        let r = sections.take(
            "retrain",
            &[
                "enabled",
                "min_new_samples",
                "accuracy_floor",
                "moving_window",
                "min_interval_s",
                "recency_weight",
                "replay_capacity",
                "pending_ttl_s",
            ],
        )?;
        let dp = RetrainPolicy::default();
        let dt = TrainerConfig::default();
        let policy = RetrainPolicy {
            min_new_samples: r.get_or("min_new_samples", dp.min_new_samples)?,
            accuracy_floor: r.get_or("accuracy_floor", dp.accuracy_floor)?,
            moving_window: r.get_or("moving_window", dp.moving_window)?,
            min_interval_us: secs_to_us(r.get_or("min_interval_s", dp.min_interval_us as f64 / 1e6)?)?,
            recency_weight: r.get_or("recency_weight", dp.recency_weight)?,
        };

        let l = sections.take("labels", &["latency_ms", "reemit_interval_s"])?;
        let latency_ms: f64 = l.get_or("latency_ms", 0.0)?;
        let reemit: Option<f64> = l.get("reemit_interval_s")?;

        let rep = sections.take("report", &["text", "kv", "decisions", "misroutes"])?;
        let report = ReportPaths {
            text: rep.get::<String>("text")?.map(|p| path(&p)),
            kv: rep.get::<String>("kv")?.map(|p| path(&p)),
            decisions: rep.get::<String>("decisions")?.map(|p| path(&p)),
            misroutes: rep.get::<String>("misroutes")?.map(|p| path(&p)),
        };
        sections.finish()?;

        let config = RunConfig {
            input,
            extractor,
            trainer: TrainerConfig {
                kind,
                params,
                policy,
                replay_capacity: r.get_or("replay_capacity", dt.replay_capacity)?,
                pending_ttl_us: secs_to_us(r.get_or("pending_ttl_s", dt.pending_ttl_us as f64 / 1e6)?)?,
            },
            retrain_enabled: r.get_or("enabled", true)?,
            initial_model: m.get::<String>("initial")?.map(|p| path(&p)),
            warmup_fraction: m.get_or("warmup_fraction", 0.2)?,
            speed_factor: run.get_or("speed_factor", 0.0)?,
            label_latency_us: secs_to_us(latency_ms / 1e3)?,
            reemit_interval_us: reemit.map(secs_to_us).transpose()?,
            workers: run.get_or("workers", 1)?,
            chunk_us: secs_to_us(run.get_or::<f64>("chunk_ms", 100.0)? / 1e3)?,
            report,
            seed,
        };
        config.validate_values()?;
        Ok(config)
    }

    fn validate_values(&self) -> Result<(), HarnessError> {
        if self.extractor.window < 1 {
            return Err(cfg("[extractor] window must be >= 1"));
        }
        self.trainer.params.validate().map_err(|e| cfg(e.to_string()))?;
        if self.trainer.params.n_trees < 1 {
            return Err(cfg("[model] n_trees must be >= 1"));
        }
        self.trainer.policy.validate().map_err(|e| cfg(format!("[retrain] {e}")))?;
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction <= 1.0) {
            return Err(cfg("[model] warmup_fraction must be in (0, 1]"));
        }
        if !(self.speed_factor.is_finite() && self.speed_factor >= 0.0) {
            return Err(cfg("[run] speed_factor must be >= 0"));
        }
        if self.workers < 1 {
            return Err(cfg("[run] workers must be >= 1"));
        }
        if self.chunk_us < 1 {
            return Err(cfg("[run] chunk_ms must be > 0"));
        }
        if self.reemit_interval_us == Some(0) {
            return Err(cfg("[labels] reemit_interval_s must be > 0"));
        }
        if let InputSource::Synthetic(s) = &self.input {
            if !(s.duration_s.is_finite() && s.duration_s >= 0.0) {
                return Err(cfg("[synthetic] duration_s must be >= 0"));
            }
            s.plan().validate().map_err(|e| cfg(e.to_string()))?;
        }
        Ok(())
    }

    /// Checks values and that every input file exists.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.validate_values()?;
        let mut files = Vec::new();
        if let InputSource::Pcap { pcap, labels } = &self.input {
            files.push(pcap);
            files.push(labels);
        }
        files.extend(self.initial_model.as_ref());
        for f in files {
            if !f.is_file() {
                return Err(cfg(format!("input file {} does not exist", f.display())));
            }
        }
        Ok(())
    }
}

fn cfg(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn secs_to_us(s: f64) -> Result<u64, HarnessError> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(cfg(format!("duration {s} must be finite and >= 0")));
    }
    Ok((s * 1e6).round() as u64)
}

struct Sections<'a> {
    ini: &'a Ini,
    taken: Vec<&'static str>,
}

impl<'a> Sections<'a> {
    fn new(ini: &'a Ini) -> Result<Self, HarnessError> {
        let mut names = Vec::new();
        for (name, props) in ini.iter() {
            match name {
                None if props.is_empty() => {}
                None => return Err(cfg("keys outside any section")),
                Some(n) if names.contains(&n) => return Err(cfg(format!("duplicate section [{n}]"))),
                Some(n) => names.push(n),
            }
        }
        Ok(Self { ini, taken: Vec::new() })
    }

    fn take(&mut self, name: &'static str, keys: &[&str]) -> Result<Section<'a>, HarnessError> {
        self.taken.push(name);
        let props = self.ini.section(Some(name));
        if let Some(p) = props {
            for (k, _) in p.iter() {
                if !keys.contains(&k) {
                    return Err(cfg(format!("unknown key [{name}] {k}")));
                }
            }
        }
        Ok(Section {
            name,
            props,
            present: props.is_some(),
        })
    }

    fn finish(&self) -> Result<(), HarnessError> {
        for name in self.ini.sections().flatten() {
            if !self.taken.contains(&name) {
                return Err(cfg(format!("unknown section [{name}]")));
            }
        }
        Ok(())
    }
}

struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
    present: bool,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| cfg(format!("[{}] {key} = {v:?}: {e}", self.name))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require(&self, key: &str) -> Result<&str, HarnessError> {
        self.raw(key).ok_or_else(|| cfg(format!("[{}] {key} is required", self.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig, HarnessError> {
        RunConfig::from_ini_str(s, Path::new("/base"))
    }

    #[test]
    fn synthetic_defaults() {
        let c = parse("[run]\nseed = 9\n[synthetic]\nflows = 60\n").unwrap();
        let InputSource::Synthetic(s) = &c.input else { panic!() };
        assert_eq!((s.seed, s.flows, s.duration_s, s.drift.is_none()), (9, [20, 20, 20], 30.0, true));
        assert_eq!(c.trainer.params, TrainParams { seed: 9, ..TrainParams::default() });
        assert_eq!(c.trainer.policy, RetrainPolicy::default());
        assert_eq!(c.trainer.replay_capacity, 5000);
        assert_eq!(c.extractor, ExtractorConfig::default());
        assert_eq!((c.workers, c.chunk_us, c.speed_factor, c.warmup_fraction), (1, 100_000, 0.0, 0.2));
        assert!(c.retrain_enabled);
    }

    #[test]
    fn full_example_parses() {
        let text = "\
[run]
seed = 7
workers = 4
chunk_ms = 50
[synthetic]
flows = 10
other_flows = 2
duration_s = 20
drift_other_fps = 50
drift_other_frame_size = 9000
[extractor]
window = 20
idle_timeout_s = 5
[model]
kind = dt
max_depth = 6
[retrain]
enabled = false
min_interval_s = 2.5
[labels]
latency_ms = 250
reemit_interval_s = 5
[report]
kv = out/report.kv
text = /abs/report.txt
";
        let c = parse(text).unwrap();
        let InputSource::Synthetic(s) = &c.input else { panic!() };
        assert_eq!(s.flows, [4, 3, 2]);
        assert_eq!(
            s.drift,
            Some(OtherDrift {
                at_s: 10.0,
                frame_rate_hz: 50.0,
                frame_size_mean_bytes: 9000.0
            })
        );
        assert_eq!(c.extractor.window, 20);
        assert_eq!(c.extractor.idle_timeout_us, 5_000_000);
        assert_eq!(c.trainer.kind, ModelKind::Tree);
        assert_eq!(c.trainer.params.n_trees, 1);
        assert_eq!(c.trainer.params.features_per_split, 8);
        assert_eq!(c.trainer.params.max_depth, 6);
        assert_eq!(c.trainer.policy.min_interval_us, 2_500_000);
        assert!(!c.retrain_enabled);
        assert_eq!(c.label_latency_us, 250_000);
        assert_eq!(c.reemit_interval_us, Some(5_000_000));
        assert_eq!((c.workers, c.chunk_us), (4, 50_000));
        assert_eq!(c.report.kv, Some(PathBuf::from("/base/out/report.kv")));
        assert_eq!(c.report.text, Some(PathBuf::from("/abs/report.txt")));
    }

    #[test]
    fn pcap_input() {
        let c = parse("[input]\npcap = a.pcap\nlabels = a.csv\n").unwrap();
        assert_eq!(
            c.input,
            InputSource::Pcap {
                pcap: "/base/a.pcap".into(),
                labels: "/base/a.csv".into()
            }
        );
        // the files do not exist
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            "",
            "[input]\npcap=a\nlabels=b\n[synthetic]\nflows=3\n",
            "[input]\npcap=a\n",
            "[synthetic]\nflowz=3\n",
            "[synth]\nflows=3\n",
            "[synthetic]\nflows=x\n",
            "[synthetic]\nflows=3\n[model]\nkind=svm\n",
            "[synthetic]\nflows=3\n[retrain]\naccuracy_floor=1.5\n",
            "[synthetic]\nflows=3\n[extractor]\nwindow=0\n",
            "[synthetic]\nflows=3\n[run]\nspeed_factor=-1\n",
            "[synthetic]\nflows=3\ndrift_at_s=4\n",
            "seed=1\n[synthetic]\nflows=3\n",
        ];
        for text in bad {
            assert!(matches!(parse(text), Err(HarnessError::Config(_))), "accepted {text:?}");
        }
    }
}
