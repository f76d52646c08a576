//! Prompt templates for the optional external completion service.
//!
//! Templates are plain-text files with `{slot}` placeholders. Braces that do
//! not name a supplied slot are left untouched, so templates may contain
//! literal JSON.

use std::collections::BTreeMap;
use std::path::Path;

use super::SensorError;

pub const TEMPLATE_IDS: [&str; 6] = [
    "parsing",
    "verbaliser",
    "bulk_intake",
    "patient_simulator",
    "feature_generation",
    "distribution_estimation",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn builtin() -> TemplateSet {
        let pairs = [
            ("parsing", include_str!("../../data/templates/parsing.txt")),
            ("verbaliser", include_str!("../../data/templates/verbaliser.txt")),
            ("bulk_intake", include_str!("../../data/templates/bulk_intake.txt")),
            ("patient_simulator", include_str!("../../data/templates/patient_simulator.txt")),
            ("feature_generation", include_str!("../../data/templates/feature_generation.txt")),
            (
                "distribution_estimation",
                include_str!("../../data/templates/distribution_estimation.txt"),
            ),
        ];
        TemplateSet {
            templates: pairs.into_iter().map(|(k, v)| (k.to_owned(), v.to_owned())).collect(),
        }
    }

    /// Loads every `<id>.txt` in a directory; all known ids must be present.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<TemplateSet, SensorError> {
        let dir = dir.as_ref();
        let mut templates = BTreeMap::new();
        for id in TEMPLATE_IDS {
            let path = dir.join(format!("{id}.txt"));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| SensorError::Template(format!("{}: {e}", path.display())))?;
            templates.insert(id.to_owned(), text);
        }
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }

    pub fn render(&self, id: &str, slots: &BTreeMap<String, String>) -> Result<String, SensorError> {
        let text = self
            .get(id)
            .ok_or_else(|| SensorError::Template(format!("no template `{id}`")))?;
        Ok(render_str(text, slots))
    }
}

pub fn render_str(template: &str, slots: &BTreeMap<String, String>) -> String {
    let mut out = template.to_owned();
    for (k, v) in slots {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_set_matches_shipped_directory() {
        let dir = crate::fixtures::data_dir().join("templates");
        assert_eq!(TemplateSet::load_dir(dir).unwrap(), TemplateSet::builtin());
    }

    #[test]
    fn render_leaves_unknown_braces() {
        let set = TemplateSet::builtin();
        let slots = BTreeMap::from([
            ("narrative".to_owned(), "I have a cough".to_owned()),
            ("features".to_owned(), "- f_cough: cough (Values: yes, no)".to_owned()),
        ]);
        let text = set.render("bulk_intake", &slots).unwrap();
        assert!(text.contains("\"I have a cough\""));
        assert!(text.contains("{\"feature_id\""));
    }
}
