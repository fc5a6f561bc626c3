use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::federation::FLConfig;
use crate::models::{ClassifierSpec, EncoderArch, EncoderKind, EncoderSpec, ImageShape, PretrainConfig, VerLossConfig};
use crate::rehearsal::{MemoryMultiplier, StrategyConfig, StrategyKind};
use crate::scenarios::ScenarioKind;

/// Environment variable holding the directory relative data paths start from.
pub const DATA_DIR_VAR: &str = "FILVER_DATA_DIR";

/// Keys whose built-in default is the reference experimental setup rather than
/// a choice of this implementation.
const PAPER_DEFAULTS: &[&str] = &[
    "fl.rounds_per_task",
    "model.arch",
    "model.kernel",
    "model.hidden",
    "model.embed_dim",
    "model.classifier_hidden",
    "model.classifier_layers",
    "protocol.kind",
    "protocol.tasks",
    "protocol.classes_per_task",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seeds to sweep; empty runs `seed` alone.
    pub seeds: Vec<u64>,
    pub output: String,
    pub data: DataSection,
    pub protocol: ProtocolSection,
    pub strategy: StrategySection,
    pub fl: FlSection,
    pub model: ModelSection,
    pub scenario: ScenarioSection,
    pub offline: OfflineSection,
    pub run: RunSection,
    /// Strategy variants run side by side on the same data; empty runs `strategy` alone.
    pub arms: Vec<ArmSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            seeds: Vec::new(),
            output: "runs/filver".into(),
            data: DataSection::default(),
            protocol: ProtocolSection::default(),
            strategy: StrategySection::default(),
            fl: FlSection::default(),
            model: ModelSection::default(),
            scenario: ScenarioSection::default(),
            offline: OfflineSection::default(),
            run: RunSection::default(),
            arms: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic` or `idx`.
    pub source: String,
    pub train_images: String,
    pub train_labels: String,
    /// Leave both test paths empty to hold out `val_fraction` of the training set.
    pub test_images: String,
    pub test_labels: String,
    /// Stored column-major, as in the EMNIST distribution.
    pub transposed: bool,
    pub val_fraction: f64,
    pub synthetic: SyntheticSection,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "synthetic".into(),
            train_images: String::new(),
            train_labels: String::new(),
            test_images: String::new(),
            test_labels: String::new(),
            transposed: false,
            val_fraction: 0.1,
            synthetic: SyntheticSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    /// `glyphs` (images) or `blobs` (flat vectors of length `dim`).
    pub kind: String,
    pub classes: usize,
    pub side: usize,
    pub dim: usize,
    pub per_class: usize,
    pub noise: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            kind: "glyphs".into(),
            classes: 40,
            side: 28,
            dim: 64,
            per_class: 250,
            noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// `split` or `permuted`.
    pub kind: String,
    pub tasks: usize,
    /// Split protocol only.
    pub classes_per_task: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            kind: "split".into(),
            tasks: 4,
            classes_per_task: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub kind: String,
    pub rho: f64,
    pub memory: String,
    pub capacity: usize,
    pub client_capacity: usize,
}

impl Default for StrategySection {
    fn default() -> Self {
        let d = StrategyConfig::default();
        StrategySection {
            kind: d.kind.as_str().into(),
            rho: d.rho,
            memory: d.memory.to_string(),
            capacity: d.capacity,
            client_capacity: d.client_capacity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlSection {
    pub rounds_per_task: usize,
    pub n_clients: usize,
    /// 0 picks half the clients (at least one).
    pub clients_per_round: usize,
    pub local_iters: usize,
    pub sst_iters: usize,
    pub eta_t: f64,
    pub eta_s: f64,
    pub batch_size: usize,
}

impl Default for FlSection {
    fn default() -> Self {
        let d = FLConfig::default();
        FlSection {
            rounds_per_task: d.rounds_per_task,
            n_clients: d.n_clients,
            clients_per_round: 0,
            local_iters: d.local_iters,
            sst_iters: d.sst_iters,
            eta_t: d.eta_t,
            eta_s: d.eta_s,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `auto` picks the encoder each strategy needs.
    pub encoder: String,
    /// `conv` or `mlp`.
    pub arch: String,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub classifier_hidden: usize,
    pub classifier_layers: usize,
    pub beta: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    /// Fraction of task 1 kept away from clients and used only to train the encoder.
    pub pretrain_heldout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        ModelSection {
            encoder: "auto".into(),
            arch: "conv".into(),
            conv_channels: vec![32, 64],
            kernel: 5,
            hidden: 1000,
            embed_dim: 256,
            classifier_hidden: 1000,
            classifier_layers: 2,
            beta: p.loss.beta,
            pretrain_epochs: p.epochs,
            pretrain_lr: p.lr,
            pretrain_batch: p.batch_size,
            pretrain_heldout: p.heldout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: String,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            kind: ScenarioKind::FullyEnrolled.as_str().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineSection {
    /// Also train the centralised joint reference on every task.
    pub enabled: bool,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for OfflineSection {
    fn default() -> Self {
        OfflineSection {
            enabled: false,
            epochs: 20,
            lr: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Rounds between checkpoints; 0 writes one only when the run stops.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmSection {
    /// Defaults to a name built from the other fields.
    pub name: String,
    /// Empty inherits `strategy.kind`.
    pub kind: String,
    /// Empty inherits `strategy.memory`.
    pub memory: String,
    /// `false` disables server-side training for this arm.
    pub sst: bool,
}

impl Default for ArmSection {
    fn default() -> Self {
        ArmSection {
            name: String::new(),
            kind: String::new(),
            memory: String::new(),
            sst: true,
        }
    }
}

/// A fully resolved strategy variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    pub strategy: StrategyConfig,
    pub sst: bool,
}

/// One problem found in a configuration, tied to the key it concerns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl ConfigIssue {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigIssue {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

/// Every issue found while resolving a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl ConfigErrors {
    pub fn single(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigErrors(vec![ConfigIssue::new(key, message)])
    }

    pub fn mentions(&self, key: &str) -> bool {
        self.0.iter().any(|i| i.key == key)
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len();
        writeln!(f, "{n} configuration error{}:", if n == 1 { "" } else { "s" })?;
        for i in &self.0 {
            writeln!(f, "  {i}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Where a resolved value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    #[serde(rename = "paper default")]
    PaperDefault,
    #[serde(rename = "non-paper default")]
    NonPaperDefault,
    #[serde(rename = "preset")]
    Preset,
    #[serde(rename = "config")]
    Config,
    #[serde(rename = "flag")]
    Flag,
}

/// One source of settings, applied over the defaults in order.
#[derive(Clone, Debug)]
pub struct Layer {
    pub origin: Origin,
    pub table: Table,
}

impl Layer {
    pub fn parse(origin: Origin, text: &str, what: &str) -> Result<Self, ConfigErrors> {
        let table = text
            .parse::<Table>()
            .map_err(|e| ConfigErrors::single("", format!("{what}: {}", e.to_string().trim_end())))?;
        Ok(Layer { origin, table })
    }

    /// Reads a TOML config, or the `config` map of a `manifest.json`.
    pub fn from_file(path: &Path) -> Result<Self, ConfigErrors> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigErrors::single("", format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            return manifest_layer(&text, path);
        }
        Self::parse(Origin::Config, &text, &path.display().to_string())
    }
}

fn manifest_layer(text: &str, path: &Path) -> Result<Layer, ConfigErrors> {
    let bad = |m: String| ConfigErrors::single("", format!("{}: {m}", path.display()));
    let json: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let entries = json
        .get("config")
        .and_then(|c| c.as_object())
        .ok_or_else(|| bad("no \"config\" object; not a run manifest".into()))?;
    let mut table = Table::new();
    for (key, entry) in entries {
        let origin: Origin = serde_json::from_value(entry["origin"].clone())
            .map_err(|e| bad(format!("entry {key}: bad origin: {e}")))?;
        if matches!(origin, Origin::PaperDefault | Origin::NonPaperDefault) {
            continue;
        }
        let value = json_to_toml(&entry["value"]).ok_or_else(|| bad(format!("entry {key} has no usable value")))?;
        insert_dotted(&mut table, key, value);
    }
    Ok(Layer {
        origin: Origin::Config,
        table,
    })
}

fn json_to_toml(v: &serde_json::Value) -> Option<Value> {
    use serde_json::Value as J;
    Some(match v {
        J::Bool(b) => Value::Boolean(*b),
        J::Number(n) => match n.as_i64() {
            Some(i) => Value::Integer(i),
            None => Value::Float(n.as_f64()?),
        },
        J::String(s) => Value::String(s.clone()),
        J::Array(a) => Value::Array(a.iter().map(json_to_toml).collect::<Option<_>>()?),
        J::Object(o) => Value::Table(
            o.iter()
                .map(|(k, v)| Some((k.clone(), json_to_toml(v)?)))
                .collect::<Option<_>>()?,
        ),
        J::Null => return None,
    })
}

fn insert_dotted(table: &mut Table, key: &str, value: Value) {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
        }
        Some((head, rest)) => {
            let sub = table
                .entry(head.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            if let Value::Table(t) = sub {
                insert_dotted(t, rest, value);
            }
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Element template for arrays whose default is empty.
fn element_template(path: &str) -> Option<Value> {
    match path {
        "seeds" => Some(Value::Integer(0)),
        "arms" => Some(Value::Table(Table::try_from(ArmSection::default()).expect("arm defaults serialize"))),
        _ => None,
    }
}

/// Checks `user` against the shape of `template`, returning the value with
/// integers widened where floats are expected.
fn conform(path: &str, template: &Value, user: &Value, issues: &mut Vec<ConfigIssue>) -> Option<Value> {
    match (template, user) {
        (Value::Table(t), Value::Table(u)) => {
            let mut out = Table::new();
            for (k, v) in u {
                let p = join(path, k);
                match t.get(k) {
                    None => issues.push(ConfigIssue::new(p, "unknown key")),
                    Some(tv) => {
                        if let Some(c) = conform(&p, tv, v, issues) {
                            out.insert(k.clone(), c);
                        }
                    }
                }
            }
            Some(Value::Table(out))
        }
        (Value::Array(t), Value::Array(u)) => {
            let elem = t.first().cloned().or_else(|| element_template(path))?;
            let mut ok = true;
            let mut out = Vec::with_capacity(u.len());
            for (i, v) in u.iter().enumerate() {
                let p = format!("{path}[{i}]");
                // an array element must be complete, so merge it over the template
                let merged = match (&elem, conform(&p, &elem, v, issues)) {
                    (Value::Table(base), Some(Value::Table(over))) => {
                        let mut m = base.clone();
                        m.extend(over);
                        Some(Value::Table(m))
                    }
                    (_, c) => c,
                };
                match merged {
                    Some(c) => out.push(c),
                    None => ok = false,
                }
            }
            ok.then_some(Value::Array(out))
        }
        (Value::Integer(_), Value::Integer(i)) => {
            if *i < 0 {
                issues.push(ConfigIssue::new(path, format!("must be a non-negative integer, found {i}")));
                None
            } else {
                Some(user.clone())
            }
        }
        (Value::Float(_), Value::Integer(i)) => Some(Value::Float(*i as f64)),
        (Value::Float(_), Value::Float(_)) | (Value::String(_), Value::String(_)) | (Value::Boolean(_), Value::Boolean(_)) => {
            Some(user.clone())
        }
        _ => {
            let expected = match template {
                Value::Float(_) => "number",
                other => type_name(other),
            };
            issues.push(ConfigIssue::new(path, format!("expected {expected}, found {}", type_name(user))));
            None
        }
    }
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

/// Leaf values of `table` under dotted keys; arrays are leaves.
pub fn flatten(table: &Table) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, t: &Table, out: &mut BTreeMap<String, Value>) {
        for (k, v) in t {
            let p = join(prefix, k);
            match v {
                Value::Table(sub) => walk(&p, sub, out),
                other => {
                    out.insert(p, other.clone());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out);
    out
}

/// A validated configuration together with the origin of every key.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    pub origins: BTreeMap<String, Origin>,
}

/// Applies `layers` over the defaults and validates the result, reporting
/// every problem at once.
pub fn resolve(layers: &[Layer]) -> Result<ResolvedConfig, ConfigErrors> {
    let defaults = Table::try_from(ExperimentConfig::default()).expect("defaults serialize");
    let template = Value::Table(defaults.clone());
    let mut origins: BTreeMap<String, Origin> = flatten(&defaults)
        .into_keys()
        .map(|k| {
            let o = if PAPER_DEFAULTS.contains(&k.as_str()) {
                Origin::PaperDefault
            } else {
                Origin::NonPaperDefault
            };
            (k, o)
        })
        .collect();
    let mut merged = defaults;
    let mut issues = Vec::new();
    for layer in layers {
        if let Some(Value::Table(t)) = conform("", &template, &Value::Table(layer.table.clone()), &mut issues) {
            for k in flatten(&t).into_keys() {
                origins.insert(k, layer.origin);
            }
            merge(&mut merged, t);
        }
    }
    // rejected entries were dropped above, so the merge still deserializes and
    // range checks can be reported alongside the structural ones
    let config: ExperimentConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| ConfigErrors::single("", e.message().to_string()))?;
    issues.extend(config.validate());
    if !issues.is_empty() {
        return Err(ConfigErrors(issues));
    }
    Ok(ResolvedConfig { config, origins })
}

/// Resolves `path` against the data directory variable when relative.
pub fn data_path(p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    if path.is_absolute() {
        return path;
    }
    match std::env::var_os(DATA_DIR_VAR) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path,
    }
}

fn parse_into<T: std::str::FromStr<Err = String>>(key: &str, s: &str, issues: &mut Vec<ConfigIssue>) -> Option<T> {
    s.parse().map_err(|e: String| issues.push(ConfigIssue::new(key, e))).ok()
}

fn one_of(key: &str, s: &str, allowed: &[&str], issues: &mut Vec<ConfigIssue>) {
    if !allowed.contains(&s) {
        issues.push(ConfigIssue::new(key, format!("unknown value {s:?}; expected one of {}", allowed.join(", "))));
    }
}

fn encoder_kind(s: &str) -> Option<EncoderKind> {
    match s {
        "random_projection" => Some(EncoderKind::RandomProjection),
        "ebr" => Some(EncoderKind::Ebr),
        "vee" => Some(EncoderKind::Vee),
        _ => None,
    }
}

impl ExperimentConfig {
    /// Range, enum and path checks. Every problem is reported.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut is = Vec::new();
        let mut check = |ok: bool, key: &str, msg: &str| {
            if !ok {
                is.push(ConfigIssue::new(key, msg));
            }
        };
        check(!self.output.is_empty(), "output", "must not be empty");

        let d = &self.data;
        let holdout = d.test_images.is_empty() && d.test_labels.is_empty();
        if holdout {
            check(
                d.val_fraction > 0.0 && d.val_fraction < 1.0,
                "data.val_fraction",
                "must lie strictly between 0 and 1",
            );
        }
        let s = &d.synthetic;
        check(s.classes >= 2, "data.synthetic.classes", "must be at least 2");
        check(s.per_class >= 2, "data.synthetic.per_class", "must be at least 2");
        check(s.side >= 1, "data.synthetic.side", "must be at least 1");
        check(s.dim >= 1, "data.synthetic.dim", "must be at least 1");
        check(s.noise.is_finite() && s.noise >= 0.0, "data.synthetic.noise", "must be finite and non-negative");

        let p = &self.protocol;
        check(p.tasks >= 1, "protocol.tasks", "must be at least 1");
        if p.kind == "split" {
            check(p.classes_per_task >= 2, "protocol.classes_per_task", "must be at least 2");
        }

        let st = &self.strategy;
        check((0.0..=1.0).contains(&st.rho), "strategy.rho", "must lie in [0, 1]");

        let fl = &self.fl;
        check(fl.rounds_per_task >= 1, "fl.rounds_per_task", "must be at least 1");
        check(fl.n_clients >= 1, "fl.n_clients", "must be at least 1");
        check(
            fl.clients_per_round <= fl.n_clients,
            "fl.clients_per_round",
            "must not exceed fl.n_clients",
        );
        check(fl.batch_size >= 1, "fl.batch_size", "must be at least 1");
        check(fl.eta_t.is_finite() && fl.eta_t >= 0.0, "fl.eta_t", "must be finite and non-negative");
        check(fl.eta_s.is_finite() && fl.eta_s >= 0.0, "fl.eta_s", "must be finite and non-negative");

        let m = &self.model;
        check(
            m.conv_channels.len() == 2 && m.conv_channels.iter().all(|&c| c >= 1),
            "model.conv_channels",
            "must hold two positive channel counts",
        );
        check(m.kernel >= 1, "model.kernel", "must be at least 1");
        check(m.hidden >= 1, "model.hidden", "must be at least 1");
        check(m.embed_dim >= 1, "model.embed_dim", "must be at least 1");
        check(m.classifier_layers >= 1, "model.classifier_layers", "must be at least 1");
        check(m.classifier_hidden >= 1, "model.classifier_hidden", "must be at least 1");
        check(m.beta.is_finite() && m.beta >= 0.0, "model.beta", "must be finite and non-negative");
        check(
            m.pretrain_lr.is_finite() && m.pretrain_lr >= 0.0,
            "model.pretrain_lr",
            "must be finite and non-negative",
        );
        check(m.pretrain_batch >= 1, "model.pretrain_batch", "must be at least 1");
        check(
            (0.0..1.0).contains(&m.pretrain_heldout),
            "model.pretrain_heldout",
            "must lie in [0, 1)",
        );
        check(
            self.offline.lr.is_finite() && self.offline.lr >= 0.0,
            "offline.lr",
            "must be finite and non-negative",
        );

        one_of("data.source", &d.source, &["synthetic", "idx"], &mut is);
        one_of("data.synthetic.kind", &s.kind, &["glyphs", "blobs"], &mut is);
        one_of("protocol.kind", &p.kind, &["split", "permuted"], &mut is);
        one_of("model.arch", &m.arch, &["conv", "mlp"], &mut is);
        one_of("model.encoder", &m.encoder, &["auto", "random_projection", "ebr", "vee"], &mut is);
        parse_into::<StrategyKind>("strategy.kind", &st.kind, &mut is);
        parse_into::<MemoryMultiplier>("strategy.memory", &st.memory, &mut is);
        let scenario = parse_into::<ScenarioKind>("scenario.kind", &self.scenario.kind, &mut is);

        if d.source == "idx" {
            for (key, value, required) in [
                ("data.train_images", &d.train_images, true),
                ("data.train_labels", &d.train_labels, true),
                ("data.test_images", &d.test_images, false),
                ("data.test_labels", &d.test_labels, false),
            ] {
                if value.is_empty() {
                    if required {
                        is.push(ConfigIssue::new(key, "required when data.source = \"idx\""));
                    }
                } else if !data_path(value).is_file() {
                    is.push(ConfigIssue::new(key, format!("file {} does not exist", data_path(value).display())));
                }
            }
            if d.test_images.is_empty() != d.test_labels.is_empty() {
                is.push(ConfigIssue::new("data.test_labels", "test images and labels must be given together"));
            }
        }

        if d.source == "synthetic" && s.kind == "blobs" && m.arch == "conv" {
            is.push(ConfigIssue::new("model.arch", "blobs are flat vectors; use the mlp encoder"));
        }

        if let Some(kind) = scenario {
            if kind != ScenarioKind::FullyEnrolled && fl.n_clients < p.tasks {
                is.push(ConfigIssue::new(
                    "scenario.kind",
                    format!("{kind} needs fl.n_clients >= protocol.tasks ({} < {})", fl.n_clients, p.tasks),
                ));
            }
        }

        let mut names = Vec::new();
        for (i, a) in self.arms.iter().enumerate() {
            if !a.kind.is_empty() {
                parse_into::<StrategyKind>(&format!("arms[{i}].kind"), &a.kind, &mut is);
            }
            if !a.memory.is_empty() {
                parse_into::<MemoryMultiplier>(&format!("arms[{i}].memory"), &a.memory, &mut is);
            }
        }
        if is.is_empty() {
            for (i, arm) in self.arms().iter().enumerate() {
                if names.contains(&arm.name) {
                    is.push(ConfigIssue::new(format!("arms[{i}].name"), format!("duplicate arm name {:?}", arm.name)));
                }
                names.push(arm.name.clone());
                if let Some(k) = encoder_kind(&m.encoder) {
                    if !arm.strategy.kind.accepts_encoder(k) {
                        is.push(ConfigIssue::new(
                            "model.encoder",
                            format!("strategy {} cannot run on a {} encoder", arm.strategy.kind, m.encoder),
                        ));
                    }
                }
            }
        }
        is
    }

    /// Seeds to run, in order.
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Strategy variants to run. Only meaningful on a validated config.
    pub fn arms(&self) -> Vec<Arm> {
        let base = self.strategy_config();
        if self.arms.is_empty() {
            return vec![Arm {
                name: arm_name(&base, true),
                strategy: base,
                sst: true,
            }];
        }
        self.arms
            .iter()
            .map(|a| {
                let mut s = base;
                if !a.kind.is_empty() {
                    s.kind = a.kind.parse().expect("validated");
                }
                if !a.memory.is_empty() {
                    s.memory = a.memory.parse().expect("validated");
                }
                Arm {
                    name: if a.name.is_empty() { arm_name(&s, a.sst) } else { a.name.clone() },
                    strategy: s,
                    sst: a.sst,
                }
            })
            .collect()
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            kind: self.strategy.kind.parse().expect("validated"),
            rho: self.strategy.rho,
            memory: self.strategy.memory.parse().expect("validated"),
            capacity: self.strategy.capacity,
            client_capacity: self.strategy.client_capacity,
        }
    }

    pub fn scenario_kind(&self) -> ScenarioKind {
        self.scenario.kind.parse().expect("validated")
    }

    pub fn fl_config(&self, sst: bool) -> FLConfig {
        let f = &self.fl;
        FLConfig {
            rounds_per_task: f.rounds_per_task,
            n_clients: f.n_clients,
            clients_per_round: if f.clients_per_round == 0 {
                (f.n_clients / 2).max(1)
            } else {
                f.clients_per_round
            },
            local_iters: f.local_iters,
            sst_iters: if sst { f.sst_iters } else { 0 },
            eta_t: f.eta_t,
            eta_s: f.eta_s,
            batch_size: f.batch_size,
        }
    }

    pub fn encoder_spec(&self, strategy: StrategyKind, input: ImageShape) -> EncoderSpec {
        let m = &self.model;
        let arch = match m.arch.as_str() {
            "mlp" => EncoderArch::Mlp { hidden: m.hidden },
            _ => EncoderArch::Conv {
                channels: [m.conv_channels[0], m.conv_channels[1]],
                kernel: m.kernel,
                hidden: m.hidden,
            },
        };
        EncoderSpec {
            kind: encoder_kind(&m.encoder).unwrap_or_else(|| strategy.default_encoder()),
            input,
            embed_dim: m.embed_dim,
            arch,
        }
    }

    pub fn classifier_spec(&self, classes: usize) -> ClassifierSpec {
        ClassifierSpec {
            input_dim: self.model.embed_dim,
            hidden: self.model.classifier_hidden,
            layers: self.model.classifier_layers,
            classes,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.model.pretrain_epochs,
            lr: self.model.pretrain_lr,
            batch_size: self.model.pretrain_batch,
            loss: VerLossConfig { beta: self.model.beta },
            heldout: self.model.pretrain_heldout,
        }
    }
}

fn arm_name(s: &StrategyConfig, sst: bool) -> String {
    let mut name = s.kind.as_str().to_string();
    if s.memory == MemoryMultiplier::X16 {
        name.push_str("-x16");
    }
    if !sst && s.kind != StrategyKind::None {
        name.push_str("-nosst");
    }
    name
}

impl ResolvedConfig {
    /// The configuration of a single `(arm, seed)` run, reproducible on its own.
    pub fn leaf(&self, arm: &Arm, seed: u64) -> ResolvedConfig {
        let mut c = self.config.clone();
        let arm_origin = self.origins.get("arms").copied().unwrap_or(Origin::Config);
        let seed_origin = if self.config.seeds.is_empty() {
            self.origins["seed"]
        } else {
            self.origins["seeds"]
        };
        let mut origins = self.origins.clone();
        let mut set = |key: &str, o: Origin| {
            origins.insert(key.to_string(), o);
        };
        if !c.arms.is_empty() {
            // keep the arm so its name and SST switch survive a reload
            c.arms = vec![ArmSection {
                name: arm.name.clone(),
                kind: arm.strategy.kind.as_str().into(),
                memory: arm.strategy.memory.to_string(),
                sst: arm.sst,
            }];
            set("arms", arm_origin);
        }
        if !c.seeds.is_empty() {
            c.seeds.clear();
            set("seeds", Origin::NonPaperDefault);
        }
        if c.seed != seed {
            c.seed = seed;
        }
        set("seed", seed_origin);
        ResolvedConfig { config: c, origins }
    }

    /// `(key, value, origin)` for every leaf key.
    pub fn entries(&self) -> Vec<(String, Value, Origin)> {
        let table = Table::try_from(&self.config).expect("config serializes");
        flatten(&table)
            .into_iter()
            .map(|(k, v)| {
                let o = self.origins.get(&k).copied().unwrap_or(Origin::Config);
                (k, v, o)
            })
            .collect()
    }
}
