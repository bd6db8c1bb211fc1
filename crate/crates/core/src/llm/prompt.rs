//! Prompt templates for the chat-completion backend.
//!
//! The baseline template states four rules that coerce the model to report
//! any recorded BCS plus an overweight prediction in a fixed shape. The
//! second built-in variant appends the exclusion instruction for lameness
//! and murmur scores.

use thiserror::Error;

use crate::domain::ClinicalNarrative;

/// Marker the narrative text is substituted into.
pub const NARRATIVE_PLACEHOLDER: &str = "{narrative}";

/// Name of the default prompt variant.
pub const BASELINE_VARIANT: &str = "figure2-baseline";
/// Name of the variant with the lameness/murmur exclusion instruction.
pub const PLUS_EXCLUSIONS_VARIANT: &str = "figure2-plus-exclusions";

const BASELINE_RULES: &str = "\
You are reading a single veterinary clinical narrative.
Rule 1: Report any body condition score (BCS) recorded in the narrative, written exactly as 'BCS <value>/<scale>'.
Rule 2: If no body condition score is recorded, reply 'No BCS recorded.'
Rule 3: State whether the animal is overweight: reply 'BCS overweight' if a 5-point score is 3.5 or above or a 9-point score is 6 or above, otherwise reply 'Not overweight'.
Rule 4: Return only the answer from rules 1-3, with no other text.

Narrative: {narrative}";

const EXCLUSION_SENTENCE: &str = "Exclude lameness scores normally recorded out of ten and heart murmur scores, normally recorded out of six.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {variant:?} does not contain the {placeholder:?} placeholder")]
    MissingPlaceholder { variant: String, placeholder: String },
    #[error("template {variant:?} contains the {placeholder:?} placeholder more than once")]
    DuplicatePlaceholder { variant: String, placeholder: String },
    #[error("unknown prompt variant {0:?}")]
    UnknownVariant(String),
}

/// An instruction block with a single slot for the narrative text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub variant_name: String,
    pub rules_text: String,
}

impl PromptTemplate {
    pub fn new(variant_name: impl Into<String>, rules_text: impl Into<String>) -> Self {
        PromptTemplate {
            variant_name: variant_name.into(),
            rules_text: rules_text.into(),
        }
    }

    /// Look up a built-in variant by name.
    pub fn builtin(variant: &str) -> Result<Self, PromptError> {
        match variant {
            BASELINE_VARIANT => Ok(Self::new(BASELINE_VARIANT, BASELINE_RULES)),
            PLUS_EXCLUSIONS_VARIANT => {
                let rules = BASELINE_RULES.replace(
                    "\n\nNarrative:",
                    &format!("\nRule 5: {EXCLUSION_SENTENCE}\n\nNarrative:"),
                );
                Ok(Self::new(PLUS_EXCLUSIONS_VARIANT, rules))
            }
            other => Err(PromptError::UnknownVariant(other.to_string())),
        }
    }

    pub fn builtin_variants() -> &'static [&'static str] {
        &[BASELINE_VARIANT, PLUS_EXCLUSIONS_VARIANT]
    }

    /// Check the template carries exactly one narrative slot.
    pub fn validate(&self) -> Result<(), PromptError> {
        match self.rules_text.matches(NARRATIVE_PLACEHOLDER).count() {
            0 => Err(PromptError::MissingPlaceholder {
                variant: self.variant_name.clone(),
                placeholder: NARRATIVE_PLACEHOLDER.to_string(),
            }),
            1 => Ok(()),
            _ => Err(PromptError::DuplicatePlaceholder {
                variant: self.variant_name.clone(),
                placeholder: NARRATIVE_PLACEHOLDER.to_string(),
            }),
        }
    }
}

/// Render the template with the narrative text substituted verbatim into
/// the slot. The narrative itself is never altered.
pub fn build_prompt(
    template: &PromptTemplate,
    narrative: &ClinicalNarrative,
) -> Result<String, PromptError> {
    template.validate()?;
    Ok(template
        .rules_text
        .replacen(NARRATIVE_PLACEHOLDER, &narrative.text, 1))
}
