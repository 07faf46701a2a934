//! Layered configuration: defaults (or paper scale), then the config file,
//! then per-key flags, then `--seed`.

use clap::{Arg, ArgAction, ArgMatches, Command};
use chemcl::pipeline::PipelineConfig;
use toml::{Table, Value};

use crate::CliError;

pub const SECTIONS: [&str; 3] = ["pretrain", "downstream", "kg_embedding"];

/// Config keys of one section, as written in config files.
pub fn section_keys(section: &str) -> Vec<String> {
    let defaults = Value::try_from(PipelineConfig::default()).expect("config serializes");
    defaults
        .get(section)
        .and_then(Value::as_table)
        .map(|t| t.keys().filter(|k| k.as_str() != "seed").cloned().collect())
        .unwrap_or_default()
}

/// Flag spelling of a config key: `GCN_layers` becomes `--gcn-layers`.
pub fn flag_name(key: &str) -> String {
    key.to_lowercase().replace('_', "-")
}

fn arg_id(section: &str, key: &str) -> String {
    format!("cfg:{section}:{key}")
}

/// Adds one flag per key of `section`, mirroring the config file.
pub fn add_section_flags(mut cmd: Command, section: &'static str) -> Command {
    for key in section_keys(section) {
        let help = format!("Overrides `{key}` in the [{section}] section");
        cmd = cmd.arg(
            Arg::new(arg_id(section, &key))
                .long(flag_name(&key))
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(help)
                .help_heading("Configuration"),
        );
    }
    cmd
}

/// Parses a flag value as a TOML scalar, falling back to a string.
fn scalar(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub struct Layers<'a> {
    pub paper_scale: bool,
    pub file: Option<&'a str>,
    pub seed: Option<u64>,
    pub sets: &'a [String],
}

pub fn resolve(layers: &Layers<'_>, matches: &ArgMatches, sections: &[&str]) -> Result<PipelineConfig, CliError> {
    let base = if layers.paper_scale { PipelineConfig::paper_scale() } else { PipelineConfig::default() };
    let mut table = Table::try_from(base).expect("config serializes");
    if let Some(path) = layers.file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Domain(anyhow::anyhow!("cannot read config {path}: {e}")))?;
        let file: Table = text
            .parse()
            .map_err(|e| CliError::Domain(anyhow::anyhow!("config {path}: {e}")))?;
        merge(&mut table, file);
    }
    for &section in sections {
        for key in section_keys(section) {
            if let Some(v) = matches.try_get_one::<String>(&arg_id(section, &key)).ok().flatten() {
                set(&mut table, section, &key, v);
            }
        }
    }
    for s in layers.sets {
        let (path, value) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set {s}: expected SECTION.KEY=VALUE")))?;
        let (section, key) = path
            .split_once('.')
            .filter(|(sec, _)| SECTIONS.contains(sec))
            .ok_or_else(|| CliError::Usage(format!("--set {s}: section must be one of {}", SECTIONS.join(", "))))?;
        set(&mut table, section, key, value);
    }
    let mut cfg: PipelineConfig = Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    if let Some(seed) = layers.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn set(table: &mut Table, section: &str, key: &str, value: &str) {
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    if let Value::Table(t) = entry {
        t.insert(key.to_string(), scalar(value));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_names_follow_keys() {
        assert_eq!(flag_name("GCN_layers"), "gcn-layers");
        assert_eq!(flag_name("batch_size"), "batch-size");
        assert!(section_keys("pretrain").contains(&"KMPNN_step".to_string()));
        assert!(!section_keys("pretrain").contains(&"seed".to_string()));
    }

    #[test]
    fn scalars_keep_their_types() {
        assert_eq!(scalar("3"), Value::Integer(3));
        assert_eq!(scalar("1e-4"), Value::Float(1e-4));
        assert_eq!(scalar("true"), Value::Boolean(true));
        assert_eq!(scalar("abc"), Value::String("abc".into()));
    }

    #[test]
    fn merge_is_recursive() {
        let mut a: Table = "[pretrain]\nepoch = 1\nlr = 0.1\n".parse().unwrap();
        let b: Table = "[pretrain]\nepoch = 5\n".parse().unwrap();
        merge(&mut a, b);
        assert_eq!(a["pretrain"]["epoch"].as_integer(), Some(5));
        assert_eq!(a["pretrain"]["lr"].as_float(), Some(0.1));
    }
}
