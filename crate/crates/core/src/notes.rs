//! Structured extraction from clinical notes through a chat-completion
//! endpoint: question battery, prompt construction, answer parsing with one
//! repair round-trip, tabularization to `1/0/-1`, focused-text assembly for
//! embeddings, and scoring of competing extraction models against gold
//! answers.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::NotesBundle;
use crate::hashing::sha256_hex;

#[derive(Debug, Error)]
pub enum NotesError {
    #[error("question battery is empty")]
    EmptyBattery,
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("endpoint timed out after {0} s")]
    Timeout(u64),
    #[error("response unparseable after one repair attempt: {0}")]
    UnparseableAfterRetry(String),
    #[error("answer list length {got} does not match gold length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad battery or gold file: {0}")]
    BadFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

/// Ordered question set, versioned by content hash. The default battery was
/// authored for this artifact and is fully replaceable from config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBattery {
    pub questions: Vec<Question>,
}

impl QuestionBattery {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Content hash identifying this battery version.
    pub fn version_hash(&self) -> String {
        let joined = self
            .questions
            .iter()
            .map(|q| format!("{}\t{}", q.id, q.text))
            .collect::<Vec<_>>()
            .join("\n");
        sha256_hex(joined.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, NotesError> {
        let raw = fs::read_to_string(path)?;
        let battery: QuestionBattery =
            serde_json::from_str(&raw).map_err(|e| NotesError::BadFile(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for q in &battery.questions {
            if !seen.insert(&q.id) {
                return Err(NotesError::BadFile(format!("duplicate question id {}", q.id)));
            }
        }
        Ok(battery)
    }
}

/// The 26 default questions covering muscle loss, performance status, weight
/// history, intake symptoms, anemia, GI symptoms, and psychiatric conditions.
pub fn default_battery() -> QuestionBattery {
    let texts: [&str; 26] = [
        "Do the notes document physical signs of skeletal muscle loss or muscle wasting?",
        "Is sarcopenia or loss of lean body mass mentioned?",
        "Is the patient's functional or performance status described as declining?",
        "Is a reduced performance score (ECOG >= 3 or low Karnofsky) documented?",
        "Is the patient described as bedridden or severely limited in self-care?",
        "Do the notes record the patient's previous weight history?",
        "Is unintentional weight loss reported?",
        "Is weight loss of more than five percent over the past six months documented?",
        "Is weight loss attributed to a recent surgery or procedure?",
        "Is weight loss described as ongoing despite nutritional intervention?",
        "Is anemia documented or suspected?",
        "Is a low hemoglobin or hematocrit value mentioned?",
        "Does the patient report early satiety or a feeling of fullness?",
        "Does the patient report nausea?",
        "Does the patient report vomiting?",
        "Is anorexia or loss of appetite documented?",
        "Is reduced or inadequate food intake documented?",
        "Are taste changes or food aversions reported?",
        "Does the patient report diarrhea?",
        "Are other gastrointestinal symptoms interfering with intake (pain, constipation)?",
        "Is fatigue, weakness, or low energy documented?",
        "Is depression or another psychiatric condition affecting intake documented?",
        "Is anxiety documented?",
        "Has the patient been referred to a dietitian or started on supplements?",
        "Is enteral or parenteral nutrition support in place or planned?",
        "Do clinicians explicitly mention cachexia or a wasting syndrome?",
    ];
    QuestionBattery {
        questions: texts
            .iter()
            .enumerate()
            .map(|(i, text)| Question {
                id: format!("q{:02}", i + 1),
                text: text.to_string(),
            })
            .collect(),
    }
}

/// Three-token answer domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    NotGiven,
}

impl Answer {
    /// `1` for yes, `0` for no, `-1` for not-given.
    pub fn code(self) -> i8 {
        match self {
            Answer::Yes => 1,
            Answer::No => 0,
            Answer::NotGiven => -1,
        }
    }

    /// Accepts the wire spellings used by extraction models and gold files.
    pub fn parse_token(token: &str) -> Option<Answer> {
        match token.trim().to_ascii_lowercase().as_str() {
            "yes" => Some(Answer::Yes),
            "no" => Some(Answer::No),
            "not-given" | "not_given" | "not given" | "notgiven" => Some(Answer::NotGiven),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionAnswer {
    pub question_id: String,
    pub answer: Answer,
    pub reasoning: String,
    /// Verbatim quote from the notes; may be empty for not-given.
    pub reference: String,
}

/// Per-patient extraction output, one entry per battery question in battery
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub patient_id: String,
    pub model_name: String,
    pub answers: Vec<QuestionAnswer>,
    pub raw_response: String,
}

/// Builds the single prompt covering all notes and all battery questions.
///
/// The output-format instruction demands a JSON array of
/// `{id, answer, reasoning, reference}` with the answer restricted to the
/// three tokens.
pub fn build_prompt(bundle: &NotesBundle, battery: &QuestionBattery) -> Result<String, NotesError> {
    if battery.is_empty() {
        return Err(NotesError::EmptyBattery);
    }
    let mut prompt = String::new();
    prompt.push_str(
        "You are reviewing a cancer patient's clinical notes to answer a fixed set of questions.\n\nCLINICAL NOTES:\n",
    );
    for note in &bundle.notes {
        let date = note.date.as_deref().unwrap_or("undated");
        prompt.push_str(&format!(
            "--- note type: {} | date: {} ---\n{}\n",
            serde_json::to_value(note.note_type)
                .expect("note type serializes")
                .as_str()
                .unwrap_or("unknown"),
            date,
            note.text
        ));
    }
    prompt.push_str("\nQUESTIONS:\n");
    for q in &battery.questions {
        prompt.push_str(&format!("{}: {}\n", q.id, q.text));
    }
    prompt.push_str(
        "\nAnswer every question using only the notes above. Respond with a JSON array only, \
         one object per question, in the question order given: \
         [{\"id\": \"<question id>\", \"answer\": \"yes\" | \"no\" | \"not-given\", \
         \"reasoning\": \"<why>\", \"reference\": \"<verbatim quote from the notes, empty if none>\"}]. \
         The answer field must be exactly one of the three tokens yes, no, not-given.\n",
    );
    Ok(prompt)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completion request wire format: model name, message list, temperature.
#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    text: String,
}

/// Anything that can answer a chat-completion request. The HTTP client and all
/// test stubs implement this.
pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, NotesError>;
}

/// Endpoint/model settings for extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_s: u64,
    pub max_inflight: usize,
    /// Fixed to 0 by default so extraction is deterministic.
    pub temperature: f64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:11434/api/chat".to_string(),
            model: "stub".to_string(),
            timeout_s: 120,
            max_inflight: 4,
            temperature: 0.0,
        }
    }
}

/// Blocking JSON-over-HTTP chat client. POSTs the request to `base_url` and
/// expects a response object with a `text` field.
pub struct HttpChatEndpoint {
    client: reqwest::blocking::Client,
    base_url: String,
    timeout_s: u64,
}

impl HttpChatEndpoint {
    pub fn new(cfg: &ClientConfig) -> Result<Self, NotesError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_s))
            .build()
            .map_err(|e| NotesError::EndpointUnreachable(e.to_string()))?;
        Ok(Self {
            client,
            base_url: cfg.base_url.clone(),
            timeout_s: cfg.timeout_s,
        })
    }
}

impl ChatEndpoint for HttpChatEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, NotesError> {
        let response = self
            .client
            .post(&self.base_url)
            .json(request)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    NotesError::Timeout(self.timeout_s)
                } else {
                    NotesError::EndpointUnreachable(e.to_string())
                }
            })?;
        if !response.status().is_success() {
            return Err(NotesError::EndpointUnreachable(format!(
                "endpoint returned {}",
                response.status()
            )));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| NotesError::EndpointUnreachable(format!("bad response body: {e}")))?;
        Ok(parsed.text)
    }
}

#[derive(Debug, Deserialize)]
struct RawAnswerEntry {
    id: String,
    answer: String,
    #[serde(default)]
    reasoning: String,
    #[serde(default)]
    reference: String,
}

// Model output often wraps the JSON array in prose; take the outermost
// bracketed span.
fn extract_json_array(text: &str) -> Option<&str> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    (end > start).then(|| &text[start..=end])
}

fn parse_answer_entries(text: &str) -> Result<Vec<RawAnswerEntry>, String> {
    let span = extract_json_array(text).ok_or("no JSON array found in response")?;
    let entries: Vec<RawAnswerEntry> =
        serde_json::from_str(span).map_err(|e| format!("invalid JSON array: {e}"))?;
    for entry in &entries {
        if Answer::parse_token(&entry.answer).is_none() {
            return Err(format!(
                "question {}: answer {:?} is not one of yes/no/not-given",
                entry.id, entry.answer
            ));
        }
    }
    Ok(entries)
}

fn assemble_result(
    patient_id: &str,
    model_name: &str,
    battery: &QuestionBattery,
    entries: Vec<RawAnswerEntry>,
    raw_response: String,
) -> ExtractionResult {
    let mut by_id: HashMap<String, RawAnswerEntry> = HashMap::new();
    for entry in entries {
        if battery.questions.iter().all(|q| q.id != entry.id) {
            log::warn!("extraction for {patient_id}: unknown question id {:?} ignored", entry.id);
            continue;
        }
        by_id.insert(entry.id.clone(), entry);
    }
    let answers = battery
        .questions
        .iter()
        .map(|q| match by_id.remove(&q.id) {
            Some(entry) => QuestionAnswer {
                question_id: q.id.clone(),
                answer: Answer::parse_token(&entry.answer).expect("validated earlier"),
                reasoning: entry.reasoning,
                reference: entry.reference,
            },
            None => {
                log::warn!(
                    "extraction for {patient_id}: question {} missing from response, filled as not-given",
                    q.id
                );
                QuestionAnswer {
                    question_id: q.id.clone(),
                    answer: Answer::NotGiven,
                    reasoning: String::new(),
                    reference: String::new(),
                }
            }
        })
        .collect();
    ExtractionResult {
        patient_id: patient_id.to_string(),
        model_name: model_name.to_string(),
        answers,
        raw_response,
    }
}

/// All-not-given result used when a patient has no notes bundle.
pub fn empty_extraction(
    patient_id: &str,
    model_name: &str,
    battery: &QuestionBattery,
) -> ExtractionResult {
    assemble_result(patient_id, model_name, battery, Vec::new(), String::new())
}

/// Runs one extraction call for a patient.
///
/// An absent bundle short-circuits to all not-given without touching the
/// endpoint. A malformed response triggers exactly one repair round-trip that
/// includes the parse error; a second failure is `UnparseableAfterRetry`.
pub fn extract_answers(
    patient_id: &str,
    bundle: Option<&NotesBundle>,
    battery: &QuestionBattery,
    endpoint: &dyn ChatEndpoint,
    cfg: &ClientConfig,
) -> Result<ExtractionResult, NotesError> {
    if battery.is_empty() {
        return Err(NotesError::EmptyBattery);
    }
    let bundle = match bundle {
        Some(b) if !b.notes.is_empty() => b,
        _ => return Ok(empty_extraction(patient_id, &cfg.model, battery)),
    };
    let prompt = build_prompt(bundle, battery)?;
    let request = ChatRequest {
        model: cfg.model.clone(),
        messages: vec![ChatMessage {
            role: "user".to_string(),
            content: prompt.clone(),
        }],
        temperature: cfg.temperature,
    };
    let first = endpoint.complete(&request)?;
    match parse_answer_entries(&first) {
        Ok(entries) => Ok(assemble_result(patient_id, &cfg.model, battery, entries, first)),
        Err(parse_error) => {
            log::warn!("extraction for {patient_id}: {parse_error}; retrying once");
            let repair = ChatRequest {
                model: cfg.model.clone(),
                messages: vec![
                    ChatMessage {
                        role: "user".to_string(),
                        content: prompt,
                    },
                    ChatMessage {
                        role: "assistant".to_string(),
                        content: first,
                    },
                    ChatMessage {
                        role: "user".to_string(),
                        content: format!(
                            "Your previous response could not be parsed: {parse_error}. \
                             Respond again with only the JSON array in the required format."
                        ),
                    },
                ],
                temperature: cfg.temperature,
            };
            let second = endpoint.complete(&repair)?;
            match parse_answer_entries(&second) {
                Ok(entries) => {
                    Ok(assemble_result(patient_id, &cfg.model, battery, entries, second))
                }
                Err(second_error) => Err(NotesError::UnparseableAfterRetry(second_error)),
            }
        }
    }
}

/// Extracts a whole cohort, running up to `cfg.max_inflight` calls
/// concurrently. Results come back in cohort order regardless of completion
/// order.
pub fn extract_cohort(
    cohort: &[crate::cohort::PatientRecord],
    battery: &QuestionBattery,
    endpoint: &dyn ChatEndpoint,
    cfg: &ClientConfig,
) -> Result<Vec<ExtractionResult>, NotesError> {
    let inflight = cfg.max_inflight.max(1);
    if inflight == 1 || cohort.len() <= 1 {
        return cohort
            .iter()
            .map(|r| extract_answers(&r.patient_id, r.notes.as_ref(), battery, endpoint, cfg))
            .collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<ExtractionResult, NotesError>>>> =
        (0..cohort.len()).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..inflight.min(cohort.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cohort.len() {
                    break;
                }
                let record = &cohort[i];
                let result = extract_answers(
                    &record.patient_id,
                    record.notes.as_ref(),
                    battery,
                    endpoint,
                    cfg,
                );
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

/// Maps answers to the `1/0/-1` vector in battery order.
pub fn tabularize(result: &ExtractionResult) -> Vec<i8> {
    result.answers.iter().map(|a| a.answer.code()).collect()
}

/// Concatenates reasoning then reference per question (battery order),
/// questions joined by newlines, empty entries skipped. This is the
/// noise-reduced text used for notes embeddings.
pub fn focused_text(result: &ExtractionResult) -> String {
    result
        .answers
        .iter()
        .filter_map(|a| {
            let reasoning = a.reasoning.trim();
            let reference = a.reference.trim();
            match (reasoning.is_empty(), reference.is_empty()) {
                (true, true) => None,
                (false, true) => Some(reasoning.to_string()),
                (true, false) => Some(reference.to_string()),
                (false, false) => Some(format!("{reasoning} {reference}")),
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Exact-match score for one patient against gold answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    pub score: usize,
    pub percent: f64,
}

/// Percent of a (possibly fractional) score over `total`, rounded to two
/// decimals.
pub fn percent_of(score: f64, total: usize) -> f64 {
    (100.0 * score / total as f64 * 100.0).round() / 100.0
}

pub fn score_against_gold(answers: &[Answer], gold: &[Answer]) -> Result<Score, NotesError> {
    if answers.len() != gold.len() {
        return Err(NotesError::LengthMismatch {
            expected: gold.len(),
            got: answers.len(),
        });
    }
    let score = answers
        .iter()
        .zip(gold)
        .filter(|(a, g)| a == g)
        .count();
    Ok(Score {
        score,
        percent: percent_of(score as f64, answers.len()),
    })
}

/// Gold answer file: patient id to 26 answer tokens.
pub fn load_gold_answers(path: &Path) -> Result<HashMap<String, Vec<Answer>>, NotesError> {
    let raw = fs::read_to_string(path)?;
    let parsed: HashMap<String, Vec<String>> =
        serde_json::from_str(&raw).map_err(|e| NotesError::BadFile(e.to_string()))?;
    parsed
        .into_iter()
        .map(|(id, tokens)| {
            let answers = tokens
                .iter()
                .map(|t| {
                    Answer::parse_token(t)
                        .ok_or_else(|| NotesError::BadFile(format!("bad token {t:?} for {id}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((id, answers))
        })
        .collect()
}

/// Scoring-harness summary over a set of patients (single model).
#[derive(Debug, Clone, Serialize)]
pub struct ScoreSummary {
    pub model_name: String,
    pub per_patient: Vec<(String, usize)>,
    pub mean_score: f64,
    pub mean_percent: f64,
}

/// Scores extraction results against gold answers, skipping patients without
/// gold entries. Deterministic: patients are ordered by id.
pub fn score_extractions(
    results: &[ExtractionResult],
    gold: &HashMap<String, Vec<Answer>>,
) -> Result<ScoreSummary, NotesError> {
    let mut per_patient = Vec::new();
    let mut total_questions = 0usize;
    for result in results {
        let Some(gold_answers) = gold.get(&result.patient_id) else {
            continue;
        };
        let answers = result.answers.iter().map(|a| a.answer).collect::<Vec<_>>();
        let score = score_against_gold(&answers, gold_answers)?;
        total_questions = gold_answers.len();
        per_patient.push((result.patient_id.clone(), score.score));
    }
    per_patient.sort();
    let mean_score = if per_patient.is_empty() {
        0.0
    } else {
        per_patient.iter().map(|(_, s)| *s as f64).sum::<f64>() / per_patient.len() as f64
    };
    let mean_percent = if total_questions == 0 {
        0.0
    } else {
        percent_of(mean_score, total_questions)
    };
    let model_name = results
        .first()
        .map(|r| r.model_name.clone())
        .unwrap_or_default();
    Ok(ScoreSummary {
        model_name,
        per_patient,
        mean_score,
        mean_percent,
    })
}

/// Writes extraction results as JSON lines, preceded by a header object
/// carrying the config hash when one is supplied.
pub fn write_extractions_jsonl(
    results: &[ExtractionResult],
    path: &Path,
    config_hash: Option<&str>,
) -> Result<(), NotesError> {
    use std::io::Write as _;
    let mut file = fs::File::create(path)?;
    if let Some(hash) = config_hash {
        writeln!(file, "{}", serde_json::json!({ "config_hash": hash }))?;
    }
    for result in results {
        writeln!(
            file,
            "{}",
            serde_json::to_string(result).expect("result serializes")
        )?;
    }
    Ok(())
}

/// Reads extraction results back; returns the embedded config hash if present.
pub fn read_extractions_jsonl(
    path: &Path,
) -> Result<(Vec<ExtractionResult>, Option<String>), NotesError> {
    let raw = fs::read_to_string(path)?;
    let mut results = Vec::new();
    let mut config_hash = None;
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(line) {
                if let Some(hash) = value.get("config_hash").and_then(|v| v.as_str()) {
                    if value.get("patient_id").is_none() {
                        config_hash = Some(hash.to_string());
                        continue;
                    }
                }
            }
        }
        let result: ExtractionResult = serde_json::from_str(line)
            .map_err(|e| NotesError::BadFile(format!("line {}: {e}", i + 1)))?;
        results.push(result);
    }
    Ok((results, config_hash))
}
