//! Surface-pattern rule table shared by the synthetic generator and the mock
//! extractor. An event sentence has the form
//!
//! ```text
//! <Holder> <verb> <Target>'s <aspect> because <rationale>.
//! ```
//!
//! where `<verb>` comes from [`OPINION_VERBS`] and fixes the sentiment label.
//! Anything the generator plants must be recognized here and nothing else.

use std::sync::OnceLock;

use regex::Regex;

use crate::model::SentimentLabel;

/// Opinion verbs and the sentiment they carry.
pub const OPINION_VERBS: &[(&str, SentimentLabel)] = &[
    ("praises", SentimentLabel::Positive),
    ("admires", SentimentLabel::Positive),
    ("applauds", SentimentLabel::Positive),
    ("commends", SentimentLabel::Positive),
    ("thanks", SentimentLabel::Positive),
    ("appreciates", SentimentLabel::Positive),
    ("celebrates", SentimentLabel::Positive),
    ("lauds", SentimentLabel::Positive),
    ("criticizes", SentimentLabel::Negative),
    ("blames", SentimentLabel::Negative),
    ("resents", SentimentLabel::Negative),
    ("condemns", SentimentLabel::Negative),
    ("scolds", SentimentLabel::Negative),
    ("mocks", SentimentLabel::Negative),
    ("distrusts", SentimentLabel::Negative),
    ("dislikes", SentimentLabel::Negative),
    ("questions", SentimentLabel::Neutral),
    ("notes", SentimentLabel::Neutral),
    ("mentions", SentimentLabel::Neutral),
    ("acknowledges", SentimentLabel::Neutral),
    ("observes", SentimentLabel::Neutral),
    ("discusses", SentimentLabel::Neutral),
    ("reviews", SentimentLabel::Neutral),
    ("examines", SentimentLabel::Neutral),
];

pub fn verb_label(verb: &str) -> Option<SentimentLabel> {
    OPINION_VERBS.iter().find(|(v, _)| *v == verb).map(|(_, label)| *label)
}

pub fn verbs_for(label: SentimentLabel) -> impl Iterator<Item = &'static str> {
    OPINION_VERBS.iter().filter(move |(_, l)| *l == label).map(|(v, _)| *v)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMatch {
    pub holder: String,
    pub opinion: String,
    pub target: String,
    pub aspect: String,
    pub rationale: String,
    pub label: SentimentLabel,
}

fn pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let verbs = OPINION_VERBS.iter().map(|(v, _)| *v).collect::<Vec<_>>().join("|");
        Regex::new(&format!(
            r"\b([A-Z][a-z]+) ({verbs}) ([A-Z][a-z]+)'s ([a-z]+) because ([^.\[\]]+)\."
        ))
        .expect("rule pattern compiles")
    })
}

/// All event matches in `text`, in order of appearance.
pub fn apply_rules(text: &str) -> Vec<RuleMatch> {
    pattern()
        .captures_iter(text)
        .map(|c| {
            let verb = c[2].to_string();
            RuleMatch {
                holder: c[1].to_string(),
                label: verb_label(&verb).expect("verb comes from the table"),
                opinion: verb,
                target: c[3].to_string(),
                aspect: c[4].to_string(),
                rationale: c[5].trim().to_string(),
            }
        })
        .collect()
}

/// Renders an event sentence that [`apply_rules`] recognizes.
pub fn render_event(holder: &str, verb: &str, target: &str, aspect: &str, rationale: &str) -> String {
    format!("{holder} {verb} {target}'s {aspect} because {rationale}.")
}
