//! Seeded synthetic dialogues with a planted causal chain.
//!
//! Planted events are template sentences recognized by [`crate::rules`]. The
//! rationale of each cause names exactly the tokens of the next event, and
//! the opinion verb is drawn from [`COMPATIBLE_VERBS`] so that the default
//! scorer keeps every planted link and no other pair. Lexical choices also
//! cap token overlap between planted events by their distance in the chain.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::DEFAULT_EMOTIONS;
use crate::error::{Error, Result};
use crate::eval::{GoldAnnotation, GoldLink};
use crate::model::{AudioFeatureRecord, Dialogue, Scenario, SentimentLabel, Sextuplet, Utterance};
use crate::rules::{render_event, verbs_for};
use crate::text;

pub const MIN_SPEC_TURNS: usize = 10;
pub const MAX_SPEC_TURNS: usize = 300;
/// Planted events are at least this many utterances apart.
pub const MIN_EVENT_SPACING: usize = 4;
/// Bounds the gap between linked events well inside the default `max_gap`.
pub const MAX_EVENT_SPACING: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub seed: u64,
    pub scenario: Scenario,
    pub turns: usize,
    pub chain_length: usize,
    pub noise_rate: f64,
    pub speakers: usize,
}

impl Default for ChainSpec {
    fn default() -> Self {
        ChainSpec {
            seed: 0,
            scenario: Scenario::SocialMedia,
            turns: 80,
            chain_length: 4,
            noise_rate: 0.0,
            speakers: 2,
        }
    }
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_SPEC_TURNS..=MAX_SPEC_TURNS).contains(&self.turns) {
            return Err(Error::Argument(format!(
                "turns = {} outside [{MIN_SPEC_TURNS}, {MAX_SPEC_TURNS}]",
                self.turns
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Argument(format!(
                "noise_rate = {} outside [0, 1]",
                self.noise_rate
            )));
        }
        if self.speakers < 2 {
            return Err(Error::Argument("at least 2 speakers are required".into()));
        }
        let needed = self.chain_length * MIN_EVENT_SPACING + 1;
        if needed > self.turns {
            return Err(Error::Argument(format!(
                "chain_length = {} needs at least {needed} turns, spec has {}",
                self.chain_length, self.turns
            )));
        }
        Ok(())
    }
}

/// Verbs whose text embedding under the default hash embedder has cosine at
/// least 0.003 with the next event's sentiment label, indexed by
/// (own label, next label).
pub const COMPATIBLE_VERBS: &[(SentimentLabel, SentimentLabel, &[&str])] = {
    use SentimentLabel::{Negative as N, Neutral as U, Positive as P};
    &[
        (P, P, &["commends", "celebrates", "lauds"]),
        (P, N, &["praises", "celebrates"]),
        (P, U, &["praises", "thanks", "appreciates", "celebrates", "lauds"]),
        (N, P, &["blames", "condemns", "scolds", "mocks"]),
        (N, N, &["criticizes", "condemns"]),
        (N, U, &["criticizes", "distrusts"]),
        (U, P, &["questions", "notes", "acknowledges", "observes"]),
        (U, N, &["acknowledges", "examines"]),
        (U, U, &["mentions", "observes", "discusses", "reviews"]),
    ]
};

pub fn compatible_verbs(own: SentimentLabel, next: SentimentLabel) -> &'static [&'static str] {
    COMPATIBLE_VERBS
        .iter()
        .find(|(a, b, _)| *a == own && *b == next)
        .map(|(_, _, v)| *v)
        .expect("table covers every label pair")
}

const PLANTED_NAMES: &[&str] = &[
    "Abel", "Bianca", "Cedric", "Dalia", "Emil", "Farah", "Gideon", "Hana", "Ivo", "Jolene", "Kasper", "Lena", "Marek",
    "Nadia", "Otto", "Priya", "Quentin", "Rosa", "Stellan", "Tamsin", "Ulric", "Vesna", "Wendel", "Xenia", "Yusuf",
    "Zora",
];

const PLANTED_ASPECTS: &[&str] = &[
    "budget", "schedule", "pricing", "roadmap", "design", "forecast", "proposal", "contract", "timeline", "hiring",
    "policy", "launch", "strategy", "rollout", "staffing", "agenda", "funding", "branding", "pitch", "report",
];

const DISTRACTOR_NAMES: &[&str] = &[
    "Anouk", "Boris", "Cosima", "Dorian", "Elsa", "Fabian", "Greta", "Hugo", "Ingrid", "Jasper", "Katja", "Lorenz",
    "Mila", "Nils",
];

const DISTRACTOR_ASPECTS: &[&str] = &[
    "lunch", "parking", "weather", "playlist", "coffee", "printer", "carpet", "lighting",
];

/// Rationales that share no token with any name, aspect, verb or label.
const LOOSE_RATIONALES: &[&str] = &[
    "the numbers looked odd",
    "nobody had slept well",
    "it felt rushed",
    "the room was too cold",
    "someone forgot the slides",
    "it came out of nowhere",
    "the deadline moved twice",
    "the call kept dropping",
    "that was the third time",
    "it matched an older rumor",
];

const FILLERS: &[&str] = &[
    "Let us move on to the next item.",
    "I see what you mean.",
    "Can you repeat that last part?",
    "That makes sense to me.",
    "We should write this down.",
    "Hold on, I am checking my notes.",
    "Fair enough, go ahead.",
    "I had not thought about it that way.",
    "Maybe we can revisit this later.",
    "Sure, that works for everyone.",
    "Give me a second to catch up.",
    "Right, and then what happened?",
    "I am not sure I agree yet.",
    "Good question, honestly.",
    "Okay, noted for the record.",
    "Does anyone else want to weigh in?",
];

#[derive(Debug, Clone)]
struct Event {
    holder: &'static str,
    target: &'static str,
    aspect: &'static str,
    verb: &'static str,
    label: SentimentLabel,
}

impl Event {
    fn tokens(&self) -> BTreeSet<String> {
        [self.holder, self.target, self.aspect, self.verb, self.label.as_str()]
            .iter()
            .map(|s| text::fold(s))
            .collect()
    }

    fn key(&self) -> (&str, &str, &str) {
        (self.holder, self.target, self.aspect)
    }

    /// Rationale naming exactly the tokens of `next`.
    fn pointer_to(next: &Event) -> String {
        format!(
            "{} {} {} {} {}",
            next.holder,
            next.target,
            next.aspect,
            next.verb,
            next.label.as_str()
        )
    }
}

/// Most tokens two planted events `distance` apart may share.
fn overlap_allowance(distance: usize) -> usize {
    distance.min(3)
}

fn plant_events(rng: &mut ChaCha8Rng, count: usize) -> Result<Vec<Event>> {
    let labels = SentimentLabel::ALL;
    let mut events: Vec<Event> = Vec::with_capacity(count);
    let mut own = *labels.choose(rng).expect("labels non-empty");
    // Labels and verbs are drawn together so each verb fits the next label.
    let mut plan: Vec<(SentimentLabel, &'static str)> = Vec::with_capacity(count);
    for i in 0..count {
        let recent: Vec<&str> = plan.iter().rev().take(2).map(|(_, v)| *v).collect();
        if i + 1 == count {
            let verbs: Vec<&str> = verbs_for(own).filter(|v| !recent.contains(v)).collect();
            plan.push((own, verbs.choose(rng).expect("four verbs per label")));
            break;
        }
        let mut nexts = labels;
        nexts.shuffle(rng);
        let (next, verb) = nexts
            .iter()
            .find_map(|&next| {
                let avail: Vec<&str> = compatible_verbs(own, next)
                    .iter()
                    .copied()
                    .filter(|v| !recent.contains(v))
                    .collect();
                avail.choose(rng).map(|v| (next, *v))
            })
            .ok_or_else(|| Error::Argument("no compatible opinion verb available".into()))?;
        plan.push((own, verb));
        own = next;
    }

    for (i, (label, verb)) in plan.into_iter().enumerate() {
        let mut placed = None;
        for _ in 0..10_000 {
            let holder = *PLANTED_NAMES.choose(rng).expect("pool non-empty");
            let target = *PLANTED_NAMES.choose(rng).expect("pool non-empty");
            let aspect = *PLANTED_ASPECTS.choose(rng).expect("pool non-empty");
            if holder == target {
                continue;
            }
            let cand = Event {
                holder,
                target,
                aspect,
                verb,
                label,
            };
            let toks = cand.tokens();
            let fits = events.iter().enumerate().all(|(j, prev)| {
                prev.key() != cand.key() && toks.intersection(&prev.tokens()).count() <= overlap_allowance(i - j)
            });
            if fits {
                placed = Some(cand);
                break;
            }
        }
        events.push(placed.ok_or_else(|| Error::Argument(format!("could not plant event {i}: vocabulary exhausted")))?);
    }
    Ok(events)
}

fn plant_positions(rng: &mut ChaCha8Rng, turns: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![rng.random_range(0..turns)];
    }
    let links = count - 1;
    let widest = ((turns - 1) / links).clamp(MIN_EVENT_SPACING, MAX_EVENT_SPACING);
    let gaps: Vec<usize> = (0..links)
        .map(|_| rng.random_range(MIN_EVENT_SPACING..=widest))
        .collect();
    let span: usize = gaps.iter().sum();
    let mut pos = rng.random_range(0..turns - span);
    let mut out = vec![pos];
    for g in gaps {
        pos += g;
        out.push(pos);
    }
    out
}

fn emotion_for(label: SentimentLabel) -> usize {
    let name = match label {
        SentimentLabel::Positive => "happy",
        SentimentLabel::Negative => "angry",
        SentimentLabel::Neutral => "neutral",
    };
    DEFAULT_EMOTIONS
        .iter()
        .position(|e| *e == name)
        .expect("default categories include the label emotions")
}

fn emotion_distribution(rng: &mut ChaCha8Rng, dominant: Option<usize>) -> Vec<f64> {
    let mut raw: Vec<f64> = (0..DEFAULT_EMOTIONS.len())
        .map(|_| rng.random_range(0.05..1.0))
        .collect();
    if let Some(d) = dominant {
        raw[d] = raw.iter().cloned().fold(0.0, f64::max) + 1.0;
    }
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

enum Line {
    Planted(usize),
    Distractor(Event, &'static str),
    NearMiss(String),
    Filler(&'static str),
}

/// Near-miss sentences that resemble events but match no rule.
fn near_miss(rng: &mut ChaCha8Rng) -> String {
    let holder = *DISTRACTOR_NAMES.choose(rng).expect("pool non-empty");
    let target = *DISTRACTOR_NAMES.choose(rng).expect("pool non-empty");
    let aspect = *DISTRACTOR_ASPECTS.choose(rng).expect("pool non-empty");
    let verb = crate::rules::OPINION_VERBS.choose(rng).expect("verbs non-empty").0;
    let why = *LOOSE_RATIONALES.choose(rng).expect("pool non-empty");
    match rng.random_range(0..3) {
        0 => format!("{holder} {verb} {target}'s {aspect}."),
        1 => format!("{} {verb} {target}'s {aspect} because {why}.", holder.to_lowercase()),
        _ => format!("{holder} {verb} the {aspect} because {why}."),
    }
}

fn distractor(rng: &mut ChaCha8Rng, taken: &BTreeSet<(String, String, String)>) -> Option<Event> {
    for _ in 0..1000 {
        let holder = *DISTRACTOR_NAMES.choose(rng).expect("pool non-empty");
        let target = *DISTRACTOR_NAMES.choose(rng).expect("pool non-empty");
        let aspect = *DISTRACTOR_ASPECTS.choose(rng).expect("pool non-empty");
        if holder == target || taken.contains(&(holder.into(), target.into(), aspect.into())) {
            continue;
        }
        let (verb, label) = *crate::rules::OPINION_VERBS.choose(rng).expect("verbs non-empty");
        return Some(Event {
            holder,
            target,
            aspect,
            verb,
            label,
        });
    }
    None
}

/// Builds a dialogue and its gold annotation. Identical specs give identical
/// output.
pub fn generate(spec: &ChainSpec) -> Result<(Dialogue, GoldAnnotation)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = spec.chain_length + 1;
    let events = plant_events(&mut rng, count)?;
    let positions = plant_positions(&mut rng, spec.turns, count);
    let planted_at: BTreeMap<usize, usize> = positions.iter().enumerate().map(|(k, p)| (*p, k)).collect();

    let mut taken: BTreeSet<(String, String, String)> = events
        .iter()
        .map(|e| (e.holder.into(), e.target.into(), e.aspect.into()))
        .collect();
    let mut lines = Vec::with_capacity(spec.turns);
    for idx in 0..spec.turns {
        let line = if let Some(&k) = planted_at.get(&idx) {
            Line::Planted(k)
        } else if rng.random_bool(spec.noise_rate) {
            let d = if rng.random_range(0..4) == 0 {
                distractor(&mut rng, &taken)
            } else {
                None
            };
            match d {
                Some(ev) => {
                    taken.insert((ev.holder.into(), ev.target.into(), ev.aspect.into()));
                    let why = *LOOSE_RATIONALES.choose(&mut rng).expect("pool non-empty");
                    Line::Distractor(ev, why)
                }
                None => Line::NearMiss(near_miss(&mut rng)),
            }
        } else {
            Line::Filler(FILLERS.choose(&mut rng).expect("pool non-empty"))
        };
        lines.push(line);
    }

    let dialogue_id = format!("synth-{}-{}", spec.scenario.as_str(), spec.seed);
    let mut utterances = Vec::with_capacity(spec.turns);
    let mut audio = BTreeMap::new();
    let mut gold = Vec::new();
    let mut gold_ids = vec![String::new(); count];
    let mut clock = 0.0f64;
    let mut last_speaker = usize::MAX;
    for (idx, line) in lines.iter().enumerate() {
        let t_start = round_ms(clock);
        let t_end = round_ms(t_start + rng.random_range(2.0..=6.0));
        clock = t_end + rng.random_range(0.0..=0.5);
        let mut speaker = rng.random_range(0..spec.speakers);
        if speaker == last_speaker {
            speaker = (speaker + 1) % spec.speakers;
        }
        last_speaker = speaker;

        let (text, event) = match line {
            Line::Planted(k) => {
                let e = &events[*k];
                let why = match events.get(k + 1) {
                    Some(next) => Event::pointer_to(next),
                    None => LOOSE_RATIONALES.choose(&mut rng).expect("pool non-empty").to_string(),
                };
                gold_ids[*k] = format!("g{}", gold.len());
                (render_event(e.holder, e.verb, e.target, e.aspect, &why), Some((e, why)))
            }
            Line::Distractor(e, why) => (
                render_event(e.holder, e.verb, e.target, e.aspect, why),
                Some((e, why.to_string())),
            ),
            Line::NearMiss(s) => (s.clone(), None),
            Line::Filler(s) => (s.to_string(), None),
        };
        if let Some((e, why)) = &event {
            gold.push(Sextuplet {
                id: format!("g{}", gold.len()),
                holder: e.holder.into(),
                target: e.target.into(),
                aspect: e.aspect.into(),
                opinion: e.verb.into(),
                sentiment_label: e.label,
                sentiment_score: None,
                rationale: why.clone(),
                window_index: 0,
                t_start,
                t_end,
            });
        }
        let u = Utterance::new(idx, format!("speaker_{}", speaker + 1), text, t_start, t_end);
        let dominant = event.as_ref().map(|(e, _)| emotion_for(e.label));
        let rec = AudioFeatureRecord {
            utterance_index: idx,
            emotion: emotion_distribution(&mut rng, dominant),
            intensity: round_ms(rng.random_range(0.1..=1.0)),
            speech_rate: u.word_count as f64 / (t_end - t_start),
        };
        audio.insert(idx, rec);
        utterances.push(u);
    }

    let causal_links = gold_ids
        .windows(2)
        .map(|w| GoldLink {
            cause: w[0].clone(),
            effect: w[1].clone(),
        })
        .collect();
    let dialogue = Dialogue {
        id: dialogue_id.clone(),
        scenario: spec.scenario,
        utterances,
        audio,
    };
    Ok((
        dialogue,
        GoldAnnotation {
            dialogue_id,
            sextuplets: gold,
            causal_links,
        },
    ))
}
