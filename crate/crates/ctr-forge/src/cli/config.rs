//! Run-configuration plumbing: flat `key = value` config files, the
//! resolved-run manifest, and the synthetic-data spec strings.
//!
//! Precedence is built-in defaults, then the config file, then command-line
//! flags. A manifest is itself a valid config file (its informational lines
//! are comments), so `--config <run>/manifest.txt` reproduces a run.

use crate::data::synthetic::PlantedConfig;
use crate::error::{CtrError, Result};
use crate::model::AblationMode;
use crate::trainer::TrainConfig;

/// Where the records come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// TSV file on disk.
    File(String),
    /// Generator spec string, e.g. `planted:n=12500,noise_cat=4`.
    Synthetic(String),
}

/// Everything a run needs, with every default materialized.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub source: Option<DataSource>,
    /// Schema for `--data` files (generators carry their own).
    pub n_dense: usize,
    pub n_cat: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            source: None,
            n_dense: 13,
            n_cat: 26,
        }
    }
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(CtrError::Parse(format!("bad boolean for {key}: `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CtrError::Parse(format!("bad value for {key}: `{v}`")))
}

fn parse_positive(v: &str, key: &str) -> Result<usize> {
    let n: usize = parse_num(v, key)?;
    if n == 0 {
        return Err(CtrError::Parse(format!("{key} must be positive")));
    }
    Ok(n)
}

pub fn parse_size_list(v: &str, key: &str) -> Result<Vec<usize>> {
    let sizes = v
        .split(',')
        .map(|s| parse_num::<usize>(s.trim(), key))
        .collect::<Result<Vec<_>>>()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CtrError::Parse(format!("{key} needs positive sizes")));
    }
    Ok(sizes)
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "lr" => {
                t.lr = parse_num(value, key)?;
                if t.lr <= 0.0 {
                    return Err(CtrError::Parse("lr must be positive".into()));
                }
            }
            "epochs" => t.epochs = parse_num(value, key)?,
            "train_batch" => t.train_batch = parse_positive(value, key)?,
            "eval_batch" => t.eval_batch = parse_positive(value, key)?,
            "split_ratio" => {
                t.split_ratio = parse_num(value, key)?;
                if !(0.0..=1.0).contains(&t.split_ratio) {
                    return Err(CtrError::Parse("split_ratio must be in [0, 1]".into()));
                }
            }
            "step_size" => t.step_size = parse_positive(value, key)?,
            "gamma" => {
                t.gamma = parse_num(value, key)?;
                if !(t.gamma > 0.0 && t.gamma <= 1.0) {
                    return Err(CtrError::Parse("gamma must be in (0, 1]".into()));
                }
            }
            "early_stop_patience" => {
                let v: usize = parse_num(value, key)?;
                t.early_stop_patience = if v == 0 { None } else { Some(v) };
            }
            "seed" => {
                t.seed = parse_num(value, key)?;
                t.model.seed = t.seed;
            }
            "min_freq" => t.min_freq = parse_positive(value, key)?,
            "bucket_cap" => t.bucket_cap = parse_positive(value, key)?,
            "sample_n" => {
                let v: usize = parse_num(value, key)?;
                t.sample_n = if v == 0 { None } else { Some(v) };
            }
            "embed_dim" => t.model.embed_dim = parse_positive(value, key)?,
            "num_heads" => t.model.num_heads = parse_positive(value, key)?,
            "cin_layers" => t.model.cin_layers = parse_size_list(value, key)?,
            "dnn_layers" => t.model.dnn_layers = parse_size_list(value, key)?,
            "use_attention" => t.model.use_attention = parse_bool(value, key)?,
            "first_order_head" => {
                t.model.first_order_head = match value {
                    "fm" => crate::model::FirstOrderHead::Fm,
                    "lr" => crate::model::FirstOrderHead::Lr,
                    _ => {
                        return Err(CtrError::Parse(format!(
                            "bad first_order_head `{value}` (fm or lr)"
                        )))
                    }
                }
            }
            "freeze_cin_weight" => t.model.freeze_cin_weight = parse_bool(value, key)?,
            "freeze_dnn_weight" => t.model.freeze_dnn_weight = parse_bool(value, key)?,
            "ablation" => t.model.apply_ablation(AblationMode::parse(value)?),
            "n_dense" => self.n_dense = parse_num(value, key)?,
            "n_cat" => self.n_cat = parse_num(value, key)?,
            "data" => self.source = Some(DataSource::File(value.to_string())),
            "synthetic" => self.source = Some(DataSource::Synthetic(value.to_string())),
            _ => return Err(CtrError::Parse(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a whole config file body.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CtrError::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The reproducible body of the manifest: every setting materialized.
    pub fn render(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        if let Some(source) = &self.source {
            match source {
                DataSource::File(p) => out.push_str(&format!("data = {p}\n")),
                DataSource::Synthetic(s) => out.push_str(&format!("synthetic = {s}\n")),
            }
        }
        out.push_str(&format!("seed = {}\n", t.seed));
        out.push_str(&format!("lr = {}\n", t.lr));
        out.push_str(&format!("epochs = {}\n", t.epochs));
        out.push_str(&format!("train_batch = {}\n", t.train_batch));
        out.push_str(&format!("eval_batch = {}\n", t.eval_batch));
        out.push_str(&format!("split_ratio = {}\n", t.split_ratio));
        out.push_str(&format!("step_size = {}\n", t.step_size));
        out.push_str(&format!("gamma = {}\n", t.gamma));
        out.push_str(&format!(
            "early_stop_patience = {}\n",
            t.early_stop_patience.unwrap_or(0)
        ));
        out.push_str(&format!("min_freq = {}\n", t.min_freq));
        out.push_str(&format!("bucket_cap = {}\n", t.bucket_cap));
        out.push_str(&format!("sample_n = {}\n", t.sample_n.unwrap_or(0)));
        out.push_str(&format!("embed_dim = {}\n", t.model.embed_dim));
        out.push_str(&format!("num_heads = {}\n", t.model.num_heads));
        out.push_str(&format!(
            "cin_layers = {}\n",
            t.model
                .cin_layers
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!(
            "dnn_layers = {}\n",
            t.model
                .dnn_layers
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!("use_attention = {}\n", t.model.use_attention));
        out.push_str(&format!(
            "first_order_head = {}\n",
            match t.model.first_order_head {
                crate::model::FirstOrderHead::Fm => "fm",
                crate::model::FirstOrderHead::Lr => "lr",
            }
        ));
        out.push_str(&format!(
            "freeze_cin_weight = {}\n",
            t.model.freeze_cin_weight
        ));
        out.push_str(&format!(
            "freeze_dnn_weight = {}\n",
            t.model.freeze_dnn_weight
        ));
        out.push_str(&format!("n_dense = {}\n", self.n_dense));
        out.push_str(&format!("n_cat = {}\n", self.n_cat));
        out
    }
}

/// Synthetic-source spec: `planted` or `firstorder`, optionally followed by
/// `:key=val,key=val` overrides.
#[derive(Debug, Clone)]
pub enum SyntheticSpec {
    Planted(PlantedConfig),
    FirstOrder { n: usize, vocab: usize, seed: u64 },
}

pub fn parse_synthetic_spec(spec: &str) -> Result<SyntheticSpec> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n, Some(r)),
        None => (spec, None),
    };
    let mut kv = Vec::new();
    if let Some(rest) = rest {
        for part in rest.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CtrError::Arg(format!("bad synthetic spec fragment `{part}`")))?;
            kv.push((k.trim(), v.trim()));
        }
    }
    match name {
        "planted" => {
            let mut cfg = PlantedConfig::default();
            for (k, v) in kv {
                match k {
                    "n" => cfg.n = parse_num(v, k)?,
                    "vocab" => cfg.vocab = parse_num(v, k)?,
                    "noise_cat" => cfg.noise_cat_fields = parse_num(v, k)?,
                    "noise_cat_vocab" => cfg.noise_cat_vocab = parse_num(v, k)?,
                    "noise_dense" => cfg.noise_dense_fields = parse_num(v, k)?,
                    "seed" => cfg.seed = parse_num(v, k)?,
                    _ => {
                        return Err(CtrError::Arg(format!(
                            "unknown planted generator key `{k}`"
                        )))
                    }
                }
            }
            Ok(SyntheticSpec::Planted(cfg))
        }
        "firstorder" => {
            let (mut n, mut vocab, mut seed) = (12_500usize, 8usize, 20_240_501u64);
            for (k, v) in kv {
                match k {
                    "n" => n = parse_num(v, k)?,
                    "vocab" => vocab = parse_num(v, k)?,
                    "seed" => seed = parse_num(v, k)?,
                    _ => {
                        return Err(CtrError::Arg(format!(
                            "unknown firstorder generator key `{k}`"
                        )))
                    }
                }
            }
            Ok(SyntheticSpec::FirstOrder { n, vocab, seed })
        }
        _ => Err(CtrError::Arg(format!(
            "unknown synthetic generator `{name}` (planted or firstorder)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("lr = 0.1\nepochs = 7\ncin_layers = 4,4\n# comment\n\nseed = 9\n")
            .unwrap();
        assert_eq!(cfg.train.lr, 0.1);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.model.cin_layers, vec![4, 4]);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.model.seed, 9);

        // Rendering then re-parsing lands on the same resolved config.
        cfg.source = Some(DataSource::Synthetic("planted:n=100".into()));
        let text = cfg.render();
        let mut again = RunConfig::default();
        again.apply_text(&text).unwrap();
        assert_eq!(again.render(), text);
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("learning_rate = 0.1").unwrap_err();
        assert!(matches!(err, CtrError::Parse(_)));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for bad in [
            "lr = 0",
            "lr = -0.1",
            "train_batch = 0",
            "step_size = 0",
            "gamma = 0",
            "gamma = 1.5",
            "split_ratio = 1.2",
            "min_freq = 0",
            "bucket_cap = 0",
            "embed_dim = 0",
            "num_heads = 0",
        ] {
            let mut cfg = RunConfig::default();
            assert!(cfg.apply_text(bad).is_err(), "accepted `{bad}`");
        }
    }

    #[test]
    fn ablation_key_resolves_flags() {
        let mut cfg = RunConfig::default();
        cfg.set("ablation", "xdeepfm").unwrap();
        assert!(!cfg.train.model.use_attention);
        assert_eq!(
            cfg.train.model.first_order_head,
            crate::model::FirstOrderHead::Lr
        );
        assert!(AblationMode::parse("bogus").is_err());
    }

    #[test]
    fn synthetic_specs() {
        match parse_synthetic_spec("planted:n=100,noise_cat=3,seed=5").unwrap() {
            SyntheticSpec::Planted(cfg) => {
                assert_eq!(cfg.n, 100);
                assert_eq!(cfg.noise_cat_fields, 3);
                assert_eq!(cfg.seed, 5);
            }
            _ => panic!("wrong variant"),
        }
        assert!(parse_synthetic_spec("planted:bogus=1").is_err());
        assert!(parse_synthetic_spec("nope").is_err());
        match parse_synthetic_spec("firstorder").unwrap() {
            SyntheticSpec::FirstOrder { n, vocab, .. } => {
                assert_eq!(n, 12_500);
                assert_eq!(vocab, 8);
            }
            _ => panic!("wrong variant"),
        }
    }
}
