//! Benchmark cards: every constant of a benchmark with where it comes from.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BenchmarkSpec, VesselSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Part of the published benchmark definition.
    Benchmark,
    /// Chosen by this implementation where the definition is silent.
    Default,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardEntry {
    pub key: String,
    pub value: Value,
    pub unit: String,
    pub provenance: Provenance,
}

fn entry(key: &str, value: Value, unit: &str, provenance: Provenance) -> CardEntry {
    CardEntry {
        key: key.into(),
        value,
        unit: unit.into(),
        provenance,
    }
}

// Rounded so radian round-off does not show up as 29.999999999999996.
fn degrees(rad: f64) -> f64 {
    (rad.to_degrees() * 1e9).round() / 1e9
}

fn entries(spec: &BenchmarkSpec) -> Vec<CardEntry> {
    use Provenance::{Benchmark as B, Default as D};
    let vessel = |s: &VesselSource| serde_json::to_value(s).expect("vessel source serialises");
    let synthetic = |s: &VesselSource| match s {
        VesselSource::Arch { seed } if *seed == super::ARCH_VARIETY_EVAL_SEED => B,
        VesselSource::ArchPerEpisode => B,
        _ => D,
    };
    let mut out = vec![
        entry("train_vessel", vessel(&spec.train_vessel), "", synthetic(&spec.train_vessel)),
        entry("eval_vessel", vessel(&spec.eval_vessel), "", synthetic(&spec.eval_vessel)),
        entry("target_branches", json!(spec.target_branches), "", B),
        entry("target_spacing", json!(spec.target_spacing), "mm", D),
        entry("train_max_duration", json!(spec.train_max_duration), "s", B),
        entry("eval_max_duration", json!(spec.eval_max_duration), "s", B),
        entry("max_translation", json!(spec.max_translation), "mm/s", B),
        entry("max_rotation", json!(spec.max_rotation), "rad/s", B),
        entry("frame_rate", json!(spec.imaging.frame_rate), "Hz", B),
        entry("success_threshold", json!(spec.success_threshold), "mm", B),
        entry("wrong_branch_margin", json!(spec.wrong_branch_margin), "mm", D),
        entry("position_padding", json!(spec.position_padding), "mm", D),
        entry("rao_lao_angle", json!(degrees(spec.imaging.rao_lao_angle)), "deg", D),
        entry("cran_caud_angle", json!(degrees(spec.imaging.cran_caud_angle)), "deg", D),
        entry("pixel_spacing", json!(spec.imaging.pixel_spacing), "mm", D),
        entry("image_size", json!([spec.imaging.image_size.0, spec.imaging.image_size.1]), "px", D),
    ];
    for (i, d) in spec.devices.iter().enumerate() {
        let p = format!("device.{i}");
        out.push(entry(&format!("{p}.name"), json!(d.name), "", D));
        out.push(entry(&format!("{p}.segments"), json!(d.segments), "", B));
        out.push(entry(&format!("{p}.total_length"), json!(d.total_length), "mm", D));
        out.push(entry(&format!("{p}.outer_diameter"), json!(d.outer_diameter), "mm", D));
        out.push(entry(&format!("{p}.inner_diameter"), json!(d.inner_diameter), "mm", D));
        out.push(entry(&format!("{p}.body_rigidity"), json!(d.body_rigidity), "", D));
        out.push(entry(&format!("{p}.is_hollow"), json!(d.is_hollow), "", B));
    }
    let e = &spec.engine;
    out.extend([
        entry("engine.ds", json!(e.ds), "mm", D),
        entry("engine.solver_iterations", json!(e.solver_iterations), "", D),
        entry("engine.displacement_tolerance", json!(e.displacement_tolerance), "mm", D),
        entry("engine.collision_margin", json!(e.collision_margin), "mm", D),
    ]);
    let n = &spec.network;
    out.extend([
        entry("network.embedder_width", json!(n.embedder_width), "", B),
        entry("network.hidden_layers", json!(n.hidden_layers), "", B),
        entry("network.n_devices", json!(n.n_devices), "", B),
        entry("network.log_std_range", json!([n.log_std_min, n.log_std_max]), "", D),
    ]);
    let t = &spec.training;
    out.extend([
        entry("training.exploration_steps", json!(t.exploration_steps), "", B),
        entry("training.eval_every", json!(t.eval_every), "steps", B),
        entry("training.eval_episodes", json!(t.eval_episodes), "", B),
        entry("training.learning_rate", json!(t.learning_rate), "", B),
        entry("training.discount", json!(t.discount), "", D),
        entry("training.replay_size", json!(t.replay_size), "", D),
        entry("training.batch_size", json!(t.batch_size), "", D),
        entry("training.entropy_target", json!(t.entropy_target), "", D),
    ]);
    out
}

/// Card as pretty JSON with a trailing newline.
pub fn card_json(spec: &BenchmarkSpec) -> String {
    let card = json!({ "name": spec.name, "entries": entries(spec) });
    let mut s = serde_json::to_string_pretty(&card).expect("card serialises");
    s.push('\n');
    s
}

/// Card as a markdown table.
pub fn card_markdown(spec: &BenchmarkSpec) -> String {
    let mut s = format!(
        "# {}\n\nConstants marked `benchmark` belong to the benchmark definition; `default` marks values chosen by this implementation.\n\n| key | value | unit | source |\n|---|---|---|---|\n",
        spec.name
    );
    for e in entries(spec) {
        let v = match &e.value {
            Value::String(x) => x.clone(),
            other => other.to_string(),
        };
        let src = match e.provenance {
            Provenance::Benchmark => "benchmark",
            Provenance::Default => "default",
        };
        s.push_str(&format!("| {} | `{}` | {} | {} |\n", e.key, v.replace('|', "\\|"), e.unit, src));
    }
    s
}
