//! Synthetic training data: per-class prompts for a chat-completion model,
//! parsing of its replies, a seeded offline generator with the same output
//! shape, and composition of multi-label queries from single-label segments.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{Dataset, LabelSet, LabelVocabulary, TextSample};
use crate::error::{Error, Result};
use crate::transport::JsonTransport;

pub const DEFAULT_SEPARATOR: &str = " ";

/// One class's prompt inputs: its label, a one-sentence description and how
/// many queries to request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    class_label: String,
    description: String,
    sample_count: usize,
}

impl PromptTemplate {
    pub fn new(
        class_label: impl Into<String>,
        description: impl Into<String>,
        sample_count: usize,
        vocabulary: &LabelVocabulary,
    ) -> Result<Self> {
        let class_label = class_label.into();
        let description = description.into();
        if vocabulary.index_of(&class_label).is_none() {
            return Err(Error::UnknownLabel {
                line: None,
                label: class_label,
            });
        }
        if description.trim().is_empty() {
            return Err(Error::InvalidConfig(format!(
                "class {class_label:?} has an empty description"
            )));
        }
        if sample_count == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        Ok(PromptTemplate {
            class_label,
            description,
            sample_count,
        })
    }

    /// Template for `label` using the vocabulary's description, falling back to the label itself.
    pub fn for_label(label: &str, sample_count: usize, vocabulary: &LabelVocabulary) -> Result<Self> {
        let description = vocabulary.description(label).unwrap_or(label).to_string();
        Self::new(label, description, sample_count, vocabulary)
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

pub fn build_prompt(template: &PromptTemplate) -> String {
    let n = template.sample_count;
    let (count, noun) = if n == 1 {
        ("exactly 1".to_string(), "user query")
    } else {
        (format!("{n} distinct"), "user queries")
    };
    format!(
        "You are helping build training data for an intent classifier.\n\
         Class label: {label}\n\
         Description: {desc}\n\
         Write {count} {noun} that a user might send when their request belongs to the class \"{label}\".\n\
         Vary the wording, vessel names, identifiers and ports.\n\
         Output one query per line with no numbering, quotes or extra commentary.",
        label = template.class_label,
        desc = template.description,
    )
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

fn strip_marker(line: &str) -> &str {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r;
        }
    }
    line.strip_prefix('-')
        .or_else(|| line.strip_prefix('*'))
        .unwrap_or(line)
}

fn clean_line(line: &str) -> &str {
    let mut cur = line;
    loop {
        let next = strip_marker(cur.trim().trim_matches(QUOTES)).trim().trim_matches(QUOTES);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// Splits a model reply into queries: list markers, surrounding whitespace and
/// quotes are removed, empty lines dropped and case-insensitive duplicates
/// collapsed to their first occurrence.
pub fn parse_generation(raw: &str) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let out: Vec<String> = raw
        .lines()
        .map(clean_line)
        .filter(|l| !l.is_empty())
        .filter(|l| seen.insert(l.to_lowercase()))
        .map(str::to_string)
        .collect();
    if out.is_empty() {
        return Err(Error::GenerationFailed {
            class: String::new(),
            message: "reply contained no usable lines".into(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenerationResult {
    pub class_label: String,
    pub texts: Vec<String>,
    pub requested: usize,
    pub received: usize,
}

impl GenerationResult {
    /// Caps the parsed texts at `requested`, warning when fewer came back.
    pub fn from_texts(class_label: &str, mut texts: Vec<String>, requested: usize) -> Self {
        texts.truncate(requested);
        if texts.len() < requested {
            warn!(
                "class {class_label:?}: requested {requested} queries, received {}",
                texts.len()
            );
        }
        GenerationResult {
            class_label: class_label.to_string(),
            received: texts.len(),
            texts,
            requested,
        }
    }
}

/// Joins one segment per combo label, in vocabulary order.
pub fn compose_multilabel(
    segments: &BTreeMap<String, String>,
    combo: &LabelSet,
    vocabulary: &LabelVocabulary,
    separator: &str,
) -> Result<TextSample> {
    combo.validate(vocabulary)?;
    let parts = combo
        .names(vocabulary)
        .into_iter()
        .map(|name| {
            segments
                .get(name)
                .map(|s| s.trim())
                .ok_or_else(|| Error::MissingSegment(name.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    TextSample::new(parts.join(separator), combo.clone())
}

struct Lexicon {
    templates: &'static [&'static str],
}

const ETA: Lexicon = Lexicon {
    templates: &[
        "Forecast the ETA to next port of {vessel}",
        "When will {vessel} arrive at {port}?",
        "Estimate the time of arrival of {vessel} at {port}",
        "What is the expected arrival date of {vessel} bound for {port}?",
        "Predict the ETA of {vessel} to {port} from her current position",
        "How many days until {vessel} reaches {port}?",
        "Give me the long-range ETA for {vessel} heading to {port}",
        "ETA of {vessel} at destination {port}?",
        "Calculate the estimated arrival time of {vessel} at {port} at the current speed",
    ],
};

const PILOTAGE: Lexicon = Lexicon {
    templates: &[
        "what is the arrival time of {vessel} to the {boarding} of {port}?",
        "When does {vessel} reach the pilot boarding ground at {port}?",
        "Estimate when {vessel} will arrive at the pilot station off {port}",
        "At what time will {vessel} pick up the pilot at the {boarding}?",
        "Time for {vessel} to reach the pilotage boarding area near {port}",
        "How soon will {vessel} be at the {boarding} for pilot boarding?",
        "Pilot boarding time for {vessel} at the {boarding}, {port}",
    ],
};

const DIRECT_BERTH: Lexicon = Lexicon {
    templates: &[
        "{vessel}, chance to get a direct berth when she arrives at {port}",
        "Will {vessel} go straight to berth at {port} without anchoring?",
        "Probability that {vessel} berths directly on arrival at {port}",
        "Can {vessel} proceed directly alongside at {port} or must she anchor first?",
        "Is a direct berthing likely for {vessel} at {port}?",
        "Does {vessel} get a berth immediately at {port}, no anchorage call?",
    ],
};

const WAITING: Lexicon = Lexicon {
    templates: &[
        "{vessel}. How long time will she wait for a berth after arrival?",
        "How many hours will {vessel} wait at anchorage at {port}?",
        "Estimate the anchorage waiting time of {vessel} before berthing at {port}",
        "Expected queue time for {vessel} after arriving at {port}",
        "How long does {vessel} have to wait before getting a berth at {port}?",
        "Waiting hours at the anchorage for {vessel} off {port}",
    ],
};

const FUEL: Lexicon = Lexicon {
    templates: &[
        "How much {fuel} is consumed by {vessel} for {hours} hours?",
        "Estimate the fuel consumption of {vessel} on the voyage to {port}",
        "What is the daily {fuel} burn of {vessel} at {speed} knots?",
        "Predict bunker usage of {vessel} for the next {hours} hours",
        "Tons of {fuel} needed by {vessel} to sail to {port}",
        "Fuel oil consumption of {vessel} steaming at {speed} knots",
    ],
};

const BERTH_STAY: Lexicon = Lexicon {
    templates: &[
        "estimate the time to unberth (ETU) of {vessel}",
        "How long will {vessel} stay alongside at {port}?",
        "When will {vessel} finish cargo operations and leave the berth at {port}?",
        "Predict the berth stay duration of {vessel} at {port}",
        "What is the expected unberthing time for {vessel} at {port}?",
        "Time {vessel} remains at the quay in {port} before unberthing",
    ],
};

const RISK: Lexicon = Lexicon {
    templates: &[
        "Does there any cases about piracy/terrorism detected for the voyage from {port} to {port2}?",
        "Assess the security risk for {vessel} sailing from {port} to {port2}",
        "Is the route from {port} to {port2} exposed to piracy or severe weather?",
        "Evaluate collision risk for {vessel} in the strait near {port}",
        "Any safety hazards or incidents reported along the passage of {vessel} to {port}?",
        "Risk rating of the voyage from {port} to {port2} for {vessel}",
    ],
};

const TRAJECTORY: Lexicon = Lexicon {
    templates: &[
        "Predict the route for {vessel}",
        "What track will {vessel} follow to reach {port}?",
        "Forecast the trajectory of {vessel} over the next {hours} hours",
        "Show the likely sailing path of {vessel} from {port}",
        "Which waypoints will {vessel} pass on her way to {port}?",
        "Plot the future course and heading of {vessel}",
    ],
};

const GENERIC_TEMPLATES: &[&str] = &[
    "Can you help with {topic} for request {ref}?",
    "I need {topic} regarding case {ref}",
    "Please check {topic} for item {ref}",
    "What is the status of {topic} on ticket {ref}?",
    "Tell me about {topic} for {ref}",
    "Question on {topic}: reference {ref}",
];

const VESSEL_TYPES: &[&str] = &[
    "tanker",
    "container ship",
    "bulk carrier",
    "LNG carrier",
    "car carrier",
    "vessel",
    "general cargo ship",
];

const VESSEL_NAMES: &[&str] = &[
    "MOUNT ST", "ACHERON", "ACTIVE", "NYK CONSTELLATION", "OOCL POLAND", "EVER GIVEN",
    "MAERSK KOLKATA", "CMA CGM TAGE", "PACIFIC DREAM", "STAR ATLAS", "NORDIC ORION",
    "HAFNIA LOTTE", "OCEAN PRIDE", "GOLDEN RAY", "SEA BREEZE", "MSC AURORA", "CAPE ARIES",
    "KOTA PELANGI", "BW PAVILION", "STENA IMPERO",
];

const PORTS: &[&str] = &[
    "Singapore", "Rotterdam", "Shanghai", "Ningbo", "Busan", "Port Klang", "Hamburg",
    "Antwerp", "Jebel Ali", "Los Angeles", "Hong Kong", "Tanjung Pelepas", "Colombo",
    "Kaohsiung", "Qingdao", "Piraeus", "Santos", "Durban",
];

const BOARDING: &[&str] = &[
    "Eastern Boarding Ground B (PEBGB)",
    "Western Boarding Ground",
    "Eastern Boarding Ground A",
    "Sea Pilot Station",
    "outer pilot boarding ground",
];

const FUELS: &[&str] = &["LSFO", "MGO", "VLSFO", "HFO", "LNG"];

fn lexicon_for(label: &str) -> Option<&'static Lexicon> {
    let l = label.to_lowercase();
    let table: [(&str, &Lexicon); 8] = [
        ("long-range eta in maritime", &ETA),
        ("arrival time to pilotage boarding ground", &PILOTAGE),
        ("direct berthing to port", &DIRECT_BERTH),
        ("vehicular waiting time after arrival", &WAITING),
        ("ship fuel consumption", &FUEL),
        ("berth staying", &BERTH_STAY),
        ("maritime risk evaluation", &RISK),
        ("vessel trajectory", &TRAJECTORY),
    ];
    table.iter().find(|(k, _)| *k == l).map(|(_, lex)| *lex)
}

fn vessel(rng: &mut ChaCha8Rng) -> String {
    let ty = VESSEL_TYPES.choose(rng).unwrap();
    let name = VESSEL_NAMES.choose(rng).unwrap();
    let imo = rng.gen_range(9_000_000..9_999_999);
    let mmsi = rng.gen_range(200_000_000..700_000_000u32);
    match rng.gen_range(0..4) {
        0 => format!("{ty} {name} (IMO {imo})"),
        1 => format!("vessel with MMSI {mmsi}"),
        2 => format!("{ty} {name} (IMO: {imo}, MMSI: {mmsi})"),
        _ => format!("the {ty} {name}"),
    }
}

/// Keyword phrases for a class without a built-in lexicon, taken from its
/// label and description.
fn topics(label: &str, description: &str) -> Vec<String> {
    let words: Vec<&str> = description
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| w.len() > 3)
        .collect();
    let mut out = vec![label.to_string()];
    for w in words.windows(2) {
        out.push(format!("{} {}", w[0], w[1]));
    }
    if out.len() == 1 {
        out.push(description.to_string());
    }
    out
}

fn fill_slots(template: &str, rng: &mut ChaCha8Rng, topic_pool: &[String]) -> String {
    let mut out = template.to_string();
    let port = *PORTS.choose(rng).unwrap();
    let replacements: [(&str, String); 9] = [
        ("{vessel}", vessel(rng)),
        ("{port2}", {
            let others: Vec<&&str> = PORTS.iter().filter(|p| **p != port).collect();
            others.choose(rng).unwrap().to_string()
        }),
        ("{port}", port.to_string()),
        ("{boarding}", BOARDING.choose(rng).unwrap().to_string()),
        ("{fuel}", FUELS.choose(rng).unwrap().to_string()),
        ("{hours}", rng.gen_range(2..96).to_string()),
        ("{speed}", format!("{}.{}", rng.gen_range(8..22), rng.gen_range(0..10))),
        (
            "{topic}",
            topic_pool.choose(rng).cloned().unwrap_or_default(),
        ),
        ("{ref}", format!("#{}", rng.gen_range(1000..99999))),
    ];
    for (slot, value) in replacements {
        out = out.replace(slot, &value);
    }
    out
}

/// Draws queries for one class until a string unseen across the whole run appears.
struct ClassSampler {
    templates: Vec<&'static str>,
    topics: Vec<String>,
}

impl ClassSampler {
    fn new(label: &str, description: &str) -> Self {
        match lexicon_for(label) {
            Some(lex) => ClassSampler {
                templates: lex.templates.to_vec(),
                topics: Vec::new(),
            },
            None => ClassSampler {
                templates: GENERIC_TEMPLATES.to_vec(),
                topics: topics(label, description),
            },
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, seen: &mut HashSet<String>, label: &str) -> Result<String> {
        for _ in 0..10_000 {
            let t = self.templates.choose(rng).unwrap();
            let text = fill_slots(t, rng, &self.topics);
            if seen.insert(text.to_lowercase()) {
                return Ok(text);
            }
        }
        Err(Error::GenerationFailed {
            class: label.to_string(),
            message: "template bank exhausted".into(),
        })
    }
}

/// Deterministic offline stand-in for the LLM: `per_class` unique queries per
/// class in vocabulary order, then one composed sample per combo built from
/// freshly drawn segments.
pub fn offline_generate(
    vocabulary: &LabelVocabulary,
    per_class: usize,
    combos: &[LabelSet],
    seed: u64,
) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::InvalidConfig("per-class count must be at least 1".into()));
    }
    for c in combos {
        if c.is_empty() {
            return Err(Error::InvalidConfig("empty label combination".into()));
        }
        c.validate(vocabulary)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let samplers: Vec<ClassSampler> = vocabulary
        .labels()
        .iter()
        .map(|l| ClassSampler::new(l, vocabulary.description(l).unwrap_or(l)))
        .collect();

    let mut samples = Vec::with_capacity(vocabulary.len() * per_class + combos.len());
    for (i, sampler) in samplers.iter().enumerate() {
        let label = vocabulary.label(i);
        for _ in 0..per_class {
            let text = sampler.draw(&mut rng, &mut seen, label)?;
            samples.push(TextSample::new(text, LabelSet::from_indices([i]))?);
        }
    }
    for combo in combos {
        let mut segments = BTreeMap::new();
        for &i in combo.indices() {
            let label = vocabulary.label(i);
            segments.insert(label.to_string(), samplers[i].draw(&mut rng, &mut seen, label)?);
        }
        samples.push(compose_multilabel(&segments, combo, vocabulary, DEFAULT_SEPARATOR)?);
    }
    Dataset::new(vocabulary.clone(), samples)
}

/// `count` label pairs cycling through every unordered pair of distinct labels
/// in a seeded order.
pub fn pair_combos(vocabulary: &LabelVocabulary, count: usize, seed: u64) -> Vec<LabelSet> {
    let m = vocabulary.len();
    let mut all: Vec<LabelSet> = (0..m)
        .flat_map(|a| (a + 1..m).map(move |b| LabelSet::from_indices([a, b])))
        .collect();
    if all.is_empty() {
        return Vec::new();
    }
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all.iter().cycle().take(count).cloned().collect()
}

fn default_temperature() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmClientConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint_url.is_empty() {
            return Err(Error::InvalidConfig("LLM endpoint URL is empty".into()));
        }
        if self.timeout_secs == 0 {
            return Err(Error::InvalidConfig("LLM timeout must be positive".into()));
        }
        Ok(())
    }
}

pub fn chat_request_body(config: &LlmClientConfig, prompt: &str) -> Value {
    json!({
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
    })
}

/// Extracts `choices[0].message.content`.
pub fn chat_response_content(response: &Value) -> Result<String> {
    response
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Remote("response lacks choices[0].message.content".into()))
}

pub struct LlmGenerator<T> {
    pub config: LlmClientConfig,
    pub bearer: Option<String>,
    pub transport: T,
}

impl<T: JsonTransport> LlmGenerator<T> {
    pub fn generate_class(&self, template: &PromptTemplate) -> Result<GenerationResult> {
        let prompt = build_prompt(template);
        let body = chat_request_body(&self.config, &prompt);
        let response = self
            .transport
            .post_json(&self.config.endpoint_url, &body, self.bearer.as_deref())?;
        let content = chat_response_content(&response)?;
        let texts = parse_generation(&content).map_err(|e| match e {
            Error::GenerationFailed { message, .. } => Error::GenerationFailed {
                class: template.class_label().to_string(),
                message,
            },
            other => other,
        })?;
        Ok(GenerationResult::from_texts(
            template.class_label(),
            texts,
            template.sample_count(),
        ))
    }
}

/// Generates a dataset through the LLM. Each class is asked for `per_class`
/// queries plus one extra per combo it appears in; the extras become the
/// segments of composed samples. Classes are requested concurrently and merged
/// in vocabulary order.
pub fn llm_generate<T: JsonTransport>(
    vocabulary: &LabelVocabulary,
    per_class: usize,
    combos: &[LabelSet],
    generator: &LlmGenerator<T>,
) -> Result<(Dataset, Vec<GenerationResult>)> {
    if per_class == 0 {
        return Err(Error::InvalidConfig("per-class count must be at least 1".into()));
    }
    generator.config.validate()?;
    let extras: Vec<usize> = (0..vocabulary.len())
        .map(|i| combos.iter().filter(|c| c.contains(i)).count())
        .collect();
    let templates = vocabulary
        .labels()
        .iter()
        .zip(&extras)
        .map(|(l, &e)| PromptTemplate::for_label(l, per_class + e, vocabulary))
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<Result<GenerationResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = templates
            .iter()
            .map(|t| scope.spawn(move || generator.generate_class(t)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation worker panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::new();
    let mut pools: Vec<std::collections::VecDeque<String>> = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let take = per_class.min(r.texts.len());
        for t in &r.texts[..take] {
            samples.push(TextSample::new(t.clone(), LabelSet::from_indices([i]))?);
        }
        pools.push(r.texts[take..].iter().cloned().collect());
    }
    for combo in combos {
        let mut segments = BTreeMap::new();
        for &i in combo.indices() {
            let seg = match pools[i].pop_front() {
                Some(s) => s,
                None => {
                    warn!("class {:?}: reusing a single-label query as a segment", vocabulary.label(i));
                    let texts = &results[i].texts;
                    texts[segments.len() % texts.len()].clone()
                }
            };
            segments.insert(vocabulary.label(i).to_string(), seg);
        }
        samples.push(compose_multilabel(&segments, combo, vocabulary, DEFAULT_SEPARATOR)?);
    }
    Ok((Dataset::new(vocabulary.clone(), samples)?, results))
}
