//! Prompt assembly from template files.
//!
//! Templates use `{{slot}}` placeholders. The bundled copies are compiled in;
//! a template directory with the same layout can replace them at run time.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{object_report, serialize_grid};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptVariant {
    #[serde(rename = "cp")]
    Cp,
    #[serde(rename = "fscot")]
    FsCot,
}

impl PromptVariant {
    pub fn k_exemplars(self) -> usize {
        match self {
            PromptVariant::Cp => 2,
            PromptVariant::FsCot => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::Cp => "cp",
            PromptVariant::FsCot => "fscot",
        }
    }

    pub fn from_name(s: &str) -> Option<PromptVariant> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cp" => Some(PromptVariant::Cp),
            "fscot" => Some(PromptVariant::FsCot),
            _ => None,
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Who answers the prompt. Participants are not asked for the instruction
/// type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Audience {
    Model,
    Participant,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template missing: {0}")]
    TemplateMissing(PathBuf),
    #[error("template {template} has no value for slot {slot}")]
    UnfilledSlot { template: String, slot: String },
    #[error("scenario {id} has an empty instruction")]
    EmptyInstruction { id: String },
}

const FILES: [&str; 6] = [
    "common_ground/cp.txt",
    "common_ground/fscot.txt",
    "demos/cp.txt",
    "demos/fscot_k7.txt",
    "response_gen.txt",
    "type_line.txt",
];

/// The template set, keyed by relative path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Templates {
    files: BTreeMap<&'static str, String>,
}

impl Templates {
    pub fn bundled() -> Self {
        let texts = [
            include_str!("../templates/common_ground/cp.txt"),
            include_str!("../templates/common_ground/fscot.txt"),
            include_str!("../templates/demos/cp.txt"),
            include_str!("../templates/demos/fscot_k7.txt"),
            include_str!("../templates/response_gen.txt"),
            include_str!("../templates/type_line.txt"),
        ];
        Templates {
            files: FILES.into_iter().zip(texts.map(String::from)).collect(),
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut files = BTreeMap::new();
        for name in FILES {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|_| PromptError::TemplateMissing(path))?;
            files.insert(name, text);
        }
        Ok(Templates { files })
    }

    fn get(&self, name: &str) -> &str {
        self.files.get(name).map(String::as_str).unwrap_or_default()
    }

    /// Template text without its final newline.
    fn body(&self, name: &str) -> &str {
        self.get(name).strip_suffix('\n').unwrap_or(self.get(name))
    }
}

impl Default for Templates {
    fn default() -> Self {
        Templates::bundled()
    }
}

/// Replaces every `{{slot}}`; a slot with no value is an error.
pub fn fill(template_name: &str, template: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| PromptError::UnfilledSlot {
            template: template_name.to_string(),
            slot: after.chars().take(20).collect(),
        })?;
        let slot = after[..end].trim();
        let value = slots
            .iter()
            .find(|(k, _)| *k == slot)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::UnfilledSlot {
                template: template_name.to_string(),
                slot: slot.to_string(),
            })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn build_common_ground(t: &Templates, variant: PromptVariant) -> String {
    let name = match variant {
        PromptVariant::Cp => "common_ground/cp.txt",
        PromptVariant::FsCot => "common_ground/fscot.txt",
    };
    t.body(name).to_string()
}

pub fn build_demonstrations(t: &Templates, variant: PromptVariant) -> String {
    let name = match variant {
        PromptVariant::Cp => "demos/cp.txt",
        PromptVariant::FsCot => "demos/fscot_k7.txt",
    };
    t.body(name).to_string()
}

/// Observed grid, object listing, and the task block for the scenario.
pub fn build_response_generation(t: &Templates, s: &Scenario, audience: Audience) -> Result<String, PromptError> {
    if s.instruction.trim().is_empty() {
        return Err(PromptError::EmptyInstruction { id: s.id.clone() });
    }
    let grid = s.observed_grid();
    let grid_text = serialize_grid(&grid);
    let listing = object_report(&grid).render();
    let type_line = match audience {
        Audience::Model => t.get("type_line.txt"),
        Audience::Participant => "",
    };
    fill(
        "response_gen.txt",
        t.body("response_gen.txt"),
        &[
            ("grid", &grid_text),
            ("object_report", &listing),
            ("human_action", &s.movement_description),
            ("instruction", &s.instruction),
            ("type_line", type_line),
        ],
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub variant: PromptVariant,
    pub common_ground: String,
    pub demonstrations: String,
    pub response_generation: String,
    pub assembled: String,
    /// Lowercase hex SHA-256 of `assembled`.
    pub content_hash: String,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Common ground, then demonstrations, then the task, separated by one
/// blank line.
pub fn build_prompt(
    t: &Templates,
    variant: PromptVariant,
    s: &Scenario,
    audience: Audience,
) -> Result<PromptBundle, PromptError> {
    let common_ground = build_common_ground(t, variant);
    let demonstrations = build_demonstrations(t, variant);
    let response_generation = build_response_generation(t, s, audience)?;
    let assembled = [common_ground.as_str(), &demonstrations, &response_generation].join("\n\n");
    let content_hash = sha256_hex(&assembled);
    Ok(PromptBundle {
        variant,
        common_ground,
        demonstrations,
        response_generation,
        assembled,
        content_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::bundled_dataset;

    #[test]
    fn fill_slots() {
        assert_eq!(fill("t", "a {{x}} b {{ y }}", &[("x", "1"), ("y", "2")]).unwrap(), "a 1 b 2");
        assert!(matches!(
            fill("t", "{{missing}}", &[]),
            Err(PromptError::UnfilledSlot { .. })
        ));
    }

    #[test]
    fn variant_separation() {
        let t = Templates::bundled();
        let cp = build_common_ground(&t, PromptVariant::Cp);
        let fs = build_common_ground(&t, PromptVariant::FsCot);
        assert!(cp.starts_with("You assist a human in a cooperative planning domain"));
        let rule = "Apply theory of mind principles to infer the human's desired gem";
        assert!(fs.contains(rule));
        assert!(!cp.contains(rule));
        assert!(fs.starts_with(&cp));
    }

    #[test]
    fn participant_block_has_no_type_line() {
        let t = Templates::bundled();
        let d = bundled_dataset();
        let s = d.get("p2").unwrap();
        let model = build_response_generation(&t, s, Audience::Model).unwrap();
        let human = build_response_generation(&t, s, Audience::Participant).unwrap();
        assert!(model.contains("\nType: <Identify the instruction type"));
        assert!(!human.contains("Type:"));
        assert!(model.contains("Human Action: The human moves to the right from their current position at (5,0)"));
    }

    #[test]
    fn empty_instruction_rejected() {
        let t = Templates::bundled();
        let mut s = bundled_dataset().get("p1").unwrap().clone();
        s.instruction = "  ".into();
        assert!(matches!(
            build_response_generation(&t, &s, Audience::Model),
            Err(PromptError::EmptyInstruction { .. })
        ));
    }

    #[test]
    fn hash_is_stable() {
        let t = Templates::bundled();
        let d = bundled_dataset();
        let s = d.get("fig1").unwrap();
        let a = build_prompt(&t, PromptVariant::Cp, s, Audience::Model).unwrap();
        let b = build_prompt(&t, PromptVariant::Cp, s, Audience::Model).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash.len(), 64);
        assert_eq!(a.content_hash, sha256_hex(&a.assembled));
        let f = build_prompt(&t, PromptVariant::FsCot, s, Audience::Model).unwrap();
        assert_ne!(a.content_hash, f.content_hash);
    }

    #[test]
    fn load_reports_missing_file() {
        let dir = std::env::temp_dir().join("dkg-no-templates-here");
        assert!(matches!(Templates::load(&dir), Err(PromptError::TemplateMissing(_))));
        let on_disk = Templates::load(concat!(env!("CARGO_MANIFEST_DIR"), "/templates")).unwrap();
        assert_eq!(on_disk, Templates::bundled());
    }
}
