//! On-disk synthetic scenes: a regular dataset plus the scripted-backend
//! file (ground truth and detector noise) and the question set.
//!
//! ```text
//! <dir>/manifest.jsonl
//! <dir>/depth/00000.png …
//! <dir>/scripted.json
//! <dir>/questions.jsonl   {"question":…,"answer":…,"category":…}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use ssm_core::backend::{DetectorNoise, ScriptedFile};
use ssm_core::synth::{SyntheticQuestion, SyntheticScene};

use crate::dataset::write_dataset;
use crate::{read_text, write_file, Error, Result};

pub const SCRIPTED_FILE: &str = "scripted.json";
pub const QUESTIONS_FILE: &str = "questions.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QuestionRecord {
    question: String,
    answer: String,
    #[serde(default)]
    category: String,
}

pub fn write_scene(dir: &Path, scene: &SyntheticScene, noise: DetectorNoise) -> Result<()> {
    write_dataset(dir, &scene.episode)?;
    let file = ScriptedFile {
        truth: Some(scene.truth.clone()),
        noise,
        ..ScriptedFile::default()
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::format(dir, e.to_string()))?;
    write_file(&dir.join(SCRIPTED_FILE), json + "\n")?;
    write_questions(&dir.join(QUESTIONS_FILE), &scene.questions)
}

pub fn read_scripted(path: &Path) -> Result<ScriptedFile> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_questions(path: &Path, questions: &[SyntheticQuestion]) -> Result<()> {
    let mut out = String::new();
    for q in questions {
        let rec = QuestionRecord {
            question: q.question.clone(),
            answer: q.answer.clone(),
            category: q.category.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::format(path, e.to_string()))?);
        out.push('\n');
    }
    write_file(path, out)
}

pub fn read_questions(path: &Path) -> Result<Vec<SyntheticQuestion>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let r: QuestionRecord =
                serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
            Ok(SyntheticQuestion {
                question: r.question,
                answer: r.answer,
                category: r.category,
            })
        })
        .collect()
}
