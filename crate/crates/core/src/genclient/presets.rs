//! Prompt presets: the prompt-engineering ladder from a bare "Apple trees"
//! prompt up to the full-tree prompt with red and yellow apples, plus the
//! dramatic-shadow variant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPreset {
    pub key: String,
    pub positive_prompt: String,
    #[serde(default)]
    pub negative_prompt: String,
    pub cfg_scale: f64,
    pub steps: u32,
    pub width: u32,
    pub height: u32,
}

pub const PRESET_KEYS: [&str; 8] = ["A", "B", "C", "D", "E", "F", "final", "shadow"];

const PROMPT_D: &str =
    "apple tree with many apples, apples, hyperrealism, 4k, render, cinematic lighting";
const NEGATIVE_E: &str = "blurry image, deformed, cartoon, drawing";
const PROMPT_FINAL: &str = "a photo of a tree standing in the grass. the tree has many apples, \
the apples are both red and yellow. beneath the tree there are a lot of apples. The many apples \
are a combination of red apples and yellow apples. volumetric lighting. shadows, hyperrealism, \
4k realism, photograph";
const PROMPT_SHADOW: &str = "a photo of a tree standing in the grass the, tree is partly in the \
shadow. the tree has many apples in the tree that are both red (apples) and yellow (apples). \
beneath the tree there are a lot of apples. cinematic lighting, lots of fine details, \
hyper-realistic, real shadow, dark setting, ultra photorealistic dramatic shadows";

fn stock(key: &str, positive: &str, negative: &str) -> PromptPreset {
    // stock pipeline defaults
    PromptPreset {
        key: key.to_string(),
        positive_prompt: positive.to_string(),
        negative_prompt: negative.to_string(),
        cfg_scale: 7.5,
        steps: 50,
        width: 512,
        height: 512,
    }
}

fn tuned(key: &str, positive: &str, negative: &str) -> PromptPreset {
    PromptPreset {
        key: key.to_string(),
        positive_prompt: positive.to_string(),
        negative_prompt: negative.to_string(),
        cfg_scale: 6.0,
        steps: 30,
        width: 1280,
        height: 704,
    }
}

pub fn builtin_presets() -> Vec<PromptPreset> {
    vec![
        stock("A", "Apple trees", ""),
        stock("B", "photo of a tree, hyperrealism, 4k, realistic, photograph", ""),
        stock("C", "apple orchard, hyperrealism, 4k, realistic, photograph", ""),
        stock("D", PROMPT_D, ""),
        stock("E", PROMPT_D, NEGATIVE_E),
        stock(
            "F",
            "photo of a tree branch with apples, apple tree, many apples, hyperrealism, 4k, realistic, photograph",
            NEGATIVE_E,
        ),
        tuned(
            "final",
            PROMPT_FINAL,
            "blurry image, deformed, cartoon, drawing, painting",
        ),
        tuned(
            "shadow",
            PROMPT_SHADOW,
            "blurry, deformed, cartoon, drawing, treeless, painting",
        ),
    ]
}

pub fn preset(key: &str) -> Option<PromptPreset> {
    builtin_presets().into_iter().find(|p| p.key == key)
}

/// Built-in presets plus user-defined ones; keys are unique.
#[derive(Debug, Clone)]
pub struct PresetLibrary {
    presets: BTreeMap<String, PromptPreset>,
}

impl Default for PresetLibrary {
    fn default() -> Self {
        Self {
            presets: builtin_presets()
                .into_iter()
                .map(|p| (p.key.clone(), p))
                .collect(),
        }
    }
}

impl PresetLibrary {
    pub fn get(&self, key: &str) -> Option<&PromptPreset> {
        self.presets.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptPreset> {
        self.presets.values()
    }

    pub fn insert(&mut self, preset: PromptPreset) -> Result<()> {
        let mut errs = Vec::new();
        if preset.key.trim().is_empty() {
            errs.push(FieldError::new("key", "must not be empty"));
        }
        if preset.positive_prompt.trim().is_empty() {
            errs.push(FieldError::new("positive_prompt", "must not be empty"));
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        if self.presets.contains_key(&preset.key) {
            return Err(Error::AlreadyExists(format!("preset {}", preset.key)));
        }
        self.presets.insert(preset.key.clone(), preset);
        Ok(())
    }
}
