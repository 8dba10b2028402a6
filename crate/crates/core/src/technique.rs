//! The persuasion technique taxonomy used by the labeled dataset and the
//! baseline prompt.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the 23 labeled persuasion techniques. The "None" class is not a
/// variant: an unlabeled context carries an empty technique set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Technique {
    AppealToAuthority,
    AppealToPopularity,
    AppealToValues,
    AppealToFearPrejudice,
    FlagWaving,
    CausalOversimplification,
    FalseDilemmaNoChoice,
    ConsequentialOversimplification,
    StrawMan,
    RedHerring,
    Whataboutism,
    Slogans,
    AppealToTime,
    ConversationKiller,
    LoadedLanguage,
    Repetition,
    ExaggerationMinimisation,
    ObfuscationVaguenessConfusion,
    NameCallingLabeling,
    Doubt,
    GuiltByAssociation,
    AppealToHypocrisy,
    QuestioningTheReputation,
}

/// Identifier used for the "None" class in prompts.
pub const NONE_NAME: &str = "None";

/// Definition of the "None" class as it appears in the baseline prompt.
pub const NONE_DEFINITION: &str =
    "The text appears unbiased and doesn't evidently employ persuasion techniques.";

impl Technique {
    /// All techniques in catalog order.
    pub const ALL: [Technique; 23] = [
        Technique::AppealToAuthority,
        Technique::AppealToPopularity,
        Technique::AppealToValues,
        Technique::AppealToFearPrejudice,
        Technique::FlagWaving,
        Technique::CausalOversimplification,
        Technique::FalseDilemmaNoChoice,
        Technique::ConsequentialOversimplification,
        Technique::StrawMan,
        Technique::RedHerring,
        Technique::Whataboutism,
        Technique::Slogans,
        Technique::AppealToTime,
        Technique::ConversationKiller,
        Technique::LoadedLanguage,
        Technique::Repetition,
        Technique::ExaggerationMinimisation,
        Technique::ObfuscationVaguenessConfusion,
        Technique::NameCallingLabeling,
        Technique::Doubt,
        Technique::GuiltByAssociation,
        Technique::AppealToHypocrisy,
        Technique::QuestioningTheReputation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Technique::AppealToAuthority => "Appeal_to_Authority",
            Technique::AppealToPopularity => "Appeal_to_Popularity",
            Technique::AppealToValues => "Appeal_to_Values",
            Technique::AppealToFearPrejudice => "Appeal_to_Fear-Prejudice",
            Technique::FlagWaving => "Flag_Waving",
            Technique::CausalOversimplification => "Causal_Oversimplification",
            Technique::FalseDilemmaNoChoice => "False_Dilemma-No_Choice",
            Technique::ConsequentialOversimplification => "Consequential_Oversimplification",
            Technique::StrawMan => "Straw_Man",
            Technique::RedHerring => "Red_Herring",
            Technique::Whataboutism => "Whataboutism",
            Technique::Slogans => "Slogans",
            Technique::AppealToTime => "Appeal_to_Time",
            Technique::ConversationKiller => "Conversation_Killer",
            Technique::LoadedLanguage => "Loaded_Language",
            Technique::Repetition => "Repetition",
            Technique::ExaggerationMinimisation => "Exaggeration-Minimisation",
            Technique::ObfuscationVaguenessConfusion => "Obfuscation-Vagueness-Confusion",
            Technique::NameCallingLabeling => "Name_Calling-Labeling",
            Technique::Doubt => "Doubt",
            Technique::GuiltByAssociation => "Guilt_by_Association",
            Technique::AppealToHypocrisy => "Appeal_to_Hypocrisy",
            Technique::QuestioningTheReputation => "Questioning_the_Reputation",
        }
    }

    /// English definition, verbatim from the baseline prompt catalog.
    pub fn definition(self) -> &'static str {
        match self {
            Technique::AppealToAuthority => "The text cites authority to support its conclusion.",
            Technique::AppealToPopularity => {
                "The text supports its conclusion by citing popularity or majority support."
            }
            Technique::AppealToValues => "The text invokes widely shared values to support its message.",
            Technique::AppealToFearPrejudice => {
                "The text uses fear or prejudice to reject or promote an idea."
            }
            Technique::FlagWaving => {
                "The text refers to patriotism or group allegiance to back its conclusion."
            }
            Technique::CausalOversimplification => {
                "The text oversimplifies the cause(s) of a subject or issue."
            }
            Technique::FalseDilemmaNoChoice => {
                "The text implies only two options when there may be more."
            }
            Technique::ConsequentialOversimplification => {
                "The text oversimplifies the consequences of accepting a proposition."
            }
            Technique::StrawMan => {
                "The text misrepresents someone's position, usually to make it easier to attack."
            }
            Technique::RedHerring => "The text diverts attention from the main topic.",
            Technique::Whataboutism => {
                "The text meant to distract from topic, discredits an opponent by charging them with hypocrisy."
            }
            Technique::Slogans => "The text uses a brief, catchy phrase to encapsulate its message.",
            Technique::AppealToTime => "The text suggests that the time is ripe for a certain action.",
            Technique::ConversationKiller => "The text discourages critical thought or discussion.",
            Technique::LoadedLanguage => {
                "The text uses emotionally charged words or phrases to validate a claim."
            }
            Technique::Repetition => "The text repeatedly reinforces the same idea.",
            Technique::ExaggerationMinimisation => {
                "The text either downplays or exaggerates a subject."
            }
            Technique::ObfuscationVaguenessConfusion => {
                "The text is deliberately unclear, leaving room for varied interpretations."
            }
            Technique::NameCallingLabeling => {
                "The text employs demeaning labels to sway sentiments."
            }
            Technique::Doubt => {
                "The text attempts to undermine credibility by questioning character or attributes."
            }
            Technique::GuiltByAssociation => {
                "The text discredits an entity by associating it with a negatively viewed group."
            }
            Technique::AppealToHypocrisy => {
                "The text accuses the target of hypocrisy, often to tarnish their reputation."
            }
            Technique::QuestioningTheReputation => {
                "The text undermines the reputation of the target, as a means to discredit their argument."
            }
        }
    }

    /// The numbered "value (definition)" block listed in the baseline system
    /// prompt, including the trailing None entry.
    pub fn catalog_listing() -> String {
        let mut out = String::new();
        for (i, t) in Technique::ALL.iter().enumerate() {
            out.push_str(&format!("{}. {}: {}\n", i + 1, t.name(), t.definition()));
        }
        out.push_str(&format!("{}. {}: {}", Technique::ALL.len() + 1, NONE_NAME, NONE_DEFINITION));
        out
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown technique '{0}'")]
pub struct UnknownTechnique(pub String);

impl FromStr for Technique {
    type Err = UnknownTechnique;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Technique::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| UnknownTechnique(s.to_string()))
    }
}

impl From<Technique> for String {
    fn from(t: Technique) -> String {
        t.name().to_string()
    }
}

impl TryFrom<String> for Technique {
    type Error = UnknownTechnique;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Serde adapter for an optional technique where `None` is written as the
/// "None" class name.
pub mod class_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{Technique, NONE_NAME};

    pub fn serialize<S: Serializer>(value: &Option<Technique>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(value.map_or(NONE_NAME, Technique::name))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Technique>, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == NONE_NAME {
            return Ok(None);
        }
        raw.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in Technique::ALL {
            assert_eq!(t.name().parse::<Technique>().unwrap(), t);
        }
    }

    #[test]
    fn listing_has_24_values() {
        let listing = Technique::catalog_listing();
        assert_eq!(listing.lines().count(), 24);
        assert!(listing.starts_with("1. Appeal_to_Authority: "));
        assert!(listing.ends_with("24. None: The text appears unbiased and doesn't evidently employ persuasion techniques."));
    }

    #[test]
    fn rejects_unknown() {
        assert_eq!(
            "Bogus_Tech".parse::<Technique>().unwrap_err().to_string(),
            "unknown technique 'Bogus_Tech'"
        );
        assert!("None".parse::<Technique>().is_err());
    }
}
