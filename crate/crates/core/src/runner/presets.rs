//! Named experiment configurations, written in the same TOML dialect as
//! config files.

const EMNIST_SPLIT4: &str = r#"
[data]
source = "idx"
train_images = "emnist-balanced-train-images-idx3-ubyte"
train_labels = "emnist-balanced-train-labels-idx1-ubyte"
test_images = "emnist-balanced-test-images-idx3-ubyte"
test_labels = "emnist-balanced-test-labels-idx1-ubyte"
transposed = true

[protocol]
kind = "split"
tasks = 4
classes_per_task = 10

[strategy]
kind = "ver_sampled"
"#;

const PERMUTED10: &str = r#"
output = "runs/permuted10-ebr-vs-naive"

[data]
source = "idx"
train_images = "train-images-idx3-ubyte"
train_labels = "train-labels-idx1-ubyte"
test_images = "t10k-images-idx3-ubyte"
test_labels = "t10k-labels-idx1-ubyte"

[protocol]
kind = "permuted"
tasks = 10

[[arms]]
kind = "none"

[[arms]]
kind = "noise"

[[arms]]
kind = "naive"

[[arms]]
kind = "ebr"
memory = "x1"

[[arms]]
kind = "ebr"
memory = "x16"
"#;

/// Small synthetic stand-in for the 4-task split benchmark; runs in seconds.
const DESK_SPLIT4: &str = r#"
output = "runs/desk-split4"
seeds = [1, 2, 3]

[data]
source = "synthetic"
val_fraction = 0.1

[data.synthetic]
kind = "glyphs"
classes = 40
side = 28
per_class = 250
noise = 0.1

[protocol]
kind = "split"
tasks = 4
classes_per_task = 10

[fl]
eta_s = 0.05

[model]
conv_channels = [8, 16]
kernel = 5
hidden = 64
embed_dim = 32
classifier_hidden = 64
classifier_layers = 2

[offline]
enabled = true

[[arms]]
kind = "none"

[[arms]]
kind = "ver_sampled"
sst = false

[[arms]]
kind = "ver_sampled"

[[arms]]
kind = "ver_stats"

[[arms]]
kind = "ebr"
"#;

pub const PRESET_NAMES: [&str; 6] = [
    "scenario1-split4",
    "scenario2-split4",
    "scenario3-split4",
    "scenario4-split4",
    "permuted10-ebr-vs-naive",
    "desk-split4",
];

/// TOML text of preset `name`.
pub fn preset(name: &str) -> Option<String> {
    let scenario = |kind: &str, n: usize| {
        format!("output = \"runs/scenario{n}-split4\"\n{EMNIST_SPLIT4}\n[scenario]\nkind = \"{kind}\"\n")
    };
    Some(match name {
        "scenario1-split4" => scenario("fully_enrolled", 1),
        "scenario2-split4" => scenario("decreasing", 2),
        "scenario3-split4" => scenario("increasing", 3),
        "scenario4-split4" => scenario("scattered", 4),
        "permuted10-ebr-vs-naive" => PERMUTED10.to_string(),
        "desk-split4" => DESK_SPLIT4.to_string(),
        _ => return None,
    })
}
