use anonpipe_core::{AttributeSet, PromptPair};

/// Negative prompt sent with every inpainting request.
pub const NEGATIVE_PROMPT: &str =
    "distortions, unrealistic textures, cartoon-like features, deformed face, extra limbs, blurry, low quality";

pub fn age_band(age: f64) -> &'static str {
    if age < 13.0 {
        "child"
    } else if age < 30.0 {
        "young"
    } else if age < 55.0 {
        "middle-aged"
    } else {
        "elderly"
    }
}

/// Attribute-conditioned prompt pair. Race and emotion labels are used as
/// given; a missing emotion reads as neutral.
pub fn build_prompt(attrs: &AttributeSet) -> PromptPair {
    let emotion = attrs.emotion.as_deref().map(str::trim).filter(|e| !e.is_empty()).unwrap_or("neutral");
    PromptPair {
        positive: format!(
            "A photorealistic portrait of a {} {} {}, with a {} expression.",
            age_band(attrs.age),
            attrs.race.trim(),
            attrs.gender,
            emotion
        ),
        negative: NEGATIVE_PROMPT.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anonpipe_core::{AttributeConfidence, Gender};

    fn attrs(age: f64, gender: Gender, race: &str, emotion: Option<&str>) -> AttributeSet {
        AttributeSet {
            age,
            gender,
            race: race.into(),
            emotion: emotion.map(Into::into),
            confidence: AttributeConfidence::default(),
        }
    }

    #[test]
    fn reference_prompt() {
        let p = build_prompt(&attrs(40.0, Gender::Female, "Asian", Some("neutral")));
        assert_eq!(p.positive, "A photorealistic portrait of a middle-aged Asian female, with a neutral expression.");
        assert_eq!(p.negative, NEGATIVE_PROMPT);
    }

    #[test]
    fn child_band_and_lowercase_labels() {
        let p = build_prompt(&attrs(8.0, Gender::Male, "white", Some("happy")));
        assert_eq!(p.positive, "A photorealistic portrait of a child white male, with a happy expression.");
    }

    #[test]
    fn missing_emotion_is_neutral() {
        let p = build_prompt(&attrs(70.0, Gender::Male, "Black", None));
        assert_eq!(p.positive, "A photorealistic portrait of a elderly Black male, with a neutral expression.");
    }

    #[test]
    fn band_edges() {
        let table = [(0.0, "child"), (12.99, "child"), (13.0, "young"), (29.5, "young"), (30.0, "middle-aged"), (54.9, "middle-aged"), (55.0, "elderly"), (101.0, "elderly")];
        for (age, band) in table {
            assert_eq!(age_band(age), band, "{age}");
        }
    }

    #[test]
    fn negative_covers_artifact_classes() {
        for term in ["distortions", "unrealistic textures", "cartoon-like features"] {
            assert!(NEGATIVE_PROMPT.contains(term));
        }
    }
}
