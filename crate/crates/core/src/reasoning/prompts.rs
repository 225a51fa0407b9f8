//! Prompt templates with `{{placeholder}}` substitution.

use std::fs;
use std::io;
use std::path::Path;

use super::{Context, Evidence};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub system: String,
    pub iqg: String,
    pub iqg_repeat: String,
    pub answer: String,
    pub answer_internal: String,
    pub sufficiency: String,
    pub final_answer: String,
    pub format_retry: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            system: include_str!("../../prompts/system.txt").into(),
            iqg: include_str!("../../prompts/iqg.txt").into(),
            iqg_repeat: include_str!("../../prompts/iqg_repeat.txt").into(),
            answer: include_str!("../../prompts/answer.txt").into(),
            answer_internal: include_str!("../../prompts/answer_internal.txt").into(),
            sufficiency: include_str!("../../prompts/sufficiency.txt").into(),
            final_answer: include_str!("../../prompts/final.txt").into(),
            format_retry: include_str!("../../prompts/format_retry.txt").into(),
        }
    }
}

impl Prompts {
    /// Defaults, overridden by any `<name>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut p = Self::default();
        let slots: [(&str, &mut String); 8] = [
            ("system", &mut p.system),
            ("iqg", &mut p.iqg),
            ("iqg_repeat", &mut p.iqg_repeat),
            ("answer", &mut p.answer),
            ("answer_internal", &mut p.answer_internal),
            ("sufficiency", &mut p.sufficiency),
            ("final", &mut p.final_answer),
            ("format_retry", &mut p.format_retry),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            match fs::read_to_string(&path) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(p)
    }
}

pub fn render_context(ctx: &Context) -> String {
    if ctx.is_empty() {
        return "(none yet)".into();
    }
    let mut out = String::new();
    for (i, e) in ctx.entries().iter().enumerate() {
        out.push_str(&format!("{}. Q: {}\n   A: {}\n", i + 1, e.subquestion(), e.subanswer()));
    }
    out.pop();
    out
}

pub fn render_evidence(evidence: &[Evidence]) -> String {
    if evidence.is_empty() {
        return "(no evidence)".into();
    }
    evidence
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}. {} | {} | {:.3}", i + 1, e.label, e.fact, e.score))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitutes `{{key}}` occurrences; unknown placeholders are left as is.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_placeholders() {
        assert_eq!(
            fill(
                "Q={{question}} C={{context}} {{other}}",
                &[("question", "a"), ("context", "b")]
            ),
            "Q=a C=b {{other}}"
        );
    }

    #[test]
    fn defaults_carry_placeholders() {
        let p = Prompts::default();
        assert!(p.iqg.contains("{{question}}") && p.iqg.contains("{{context}}"));
        assert!(p.answer.contains("{{evidence}}") && p.answer.contains("{{subquestion}}"));
        assert!(!p.answer_internal.contains("{{evidence}}"));
        assert!(p.final_answer.contains("FINAL:"));
    }

    #[test]
    fn load_dir_overrides_some() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("final.txt"), "custom {{question}}").unwrap();
        let p = Prompts::load_dir(dir.path()).unwrap();
        assert_eq!(p.final_answer, "custom {{question}}");
        assert_eq!(p.iqg, Prompts::default().iqg);
    }

    #[test]
    fn evidence_rendering() {
        let ev = [Evidence {
            label: "Cabo San Lucas".into(),
            fact: "location.affected → Cabo San Lucas".into(),
            score: 0.91,
        }];
        assert_eq!(
            render_evidence(&ev),
            "1. Cabo San Lucas | location.affected → Cabo San Lucas | 0.910"
        );
        assert_eq!(render_evidence(&[]), "(no evidence)");
    }
}
