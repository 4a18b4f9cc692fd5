//! The 30-cell demographic profile grid and the three prompt renderers.
//!
//! Profiles combine gender (2) x age band (5) x education (3). Each
//! attribute keeps two string forms: a canonical token used in files and
//! parsing, and the phrasing substituted into the generation prompt.
//! Prompt templates live as resource files with `{slot}` placeholders so
//! renders can be checked against frozen golden files.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GENERATION_SYSTEM: &str = include_str!("../resources/prompt_generation_system.txt");
const GENERATION_CONTEXT: &str = include_str!("../resources/prompt_generation_context.txt");
const JUDGMENT_SYSTEM_WITH: &str =
    include_str!("../resources/prompt_judgment_system_with_comments.txt");
const JUDGMENT_CONTEXT_WITH: &str =
    include_str!("../resources/prompt_judgment_context_with_comments.txt");
const JUDGMENT_SYSTEM_NO: &str = include_str!("../resources/prompt_judgment_system_no_comments.txt");
const JUDGMENT_CONTEXT_NO: &str =
    include_str!("../resources/prompt_judgment_context_no_comments.txt");
const PROFILE_SYSTEM: &str = include_str!("../resources/prompt_profile_system.txt");
const PROFILE_CONTEXT: &str = include_str!("../resources/prompt_profile_context.txt");
const SYNONYMS_JSON: &str = include_str!("../resources/profile_synonyms.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    /// Canonical token used in files and parsed output.
    pub fn token(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    /// Phrasing substituted into the generation prompt.
    pub fn prompt_phrase(self) -> &'static str {
        self.token()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "≤17")]
    Under17,
    #[serde(rename = "18-29")]
    From18To29,
    #[serde(rename = "30-49")]
    From30To49,
    #[serde(rename = "50-64")]
    From50To64,
    #[serde(rename = "≥65")]
    Over65,
}

impl AgeBand {
    pub const ALL: [AgeBand; 5] = [
        AgeBand::Under17,
        AgeBand::From18To29,
        AgeBand::From30To49,
        AgeBand::From50To64,
        AgeBand::Over65,
    ];

    pub fn token(self) -> &'static str {
        match self {
            AgeBand::Under17 => "≤17",
            AgeBand::From18To29 => "18-29",
            AgeBand::From30To49 => "30-49",
            AgeBand::From50To64 => "50-64",
            AgeBand::Over65 => "≥65",
        }
    }

    pub fn prompt_phrase(self) -> &'static str {
        match self {
            AgeBand::Under17 => "under 17 years old",
            AgeBand::From18To29 => "18 to 29 years old",
            AgeBand::From30To49 => "30 to 49 years old",
            AgeBand::From50To64 => "50 to 64 years old",
            AgeBand::Over65 => "over 65 years old",
        }
    }

    /// ASCII-safe form for identifiers.
    pub fn slug(self) -> &'static str {
        match self {
            AgeBand::Under17 => "le17",
            AgeBand::From18To29 => "18to29",
            AgeBand::From30To49 => "30to49",
            AgeBand::From50To64 => "50to64",
            AgeBand::Over65 => "ge65",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Education {
    #[serde(rename = "college graduate")]
    CollegeGraduate,
    #[serde(rename = "not graduated from college")]
    NotCollegeGraduate,
    #[serde(rename = "high school diploma or less")]
    HighSchoolOrLess,
}

impl Education {
    pub const ALL: [Education; 3] = [
        Education::CollegeGraduate,
        Education::NotCollegeGraduate,
        Education::HighSchoolOrLess,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Education::CollegeGraduate => "college graduate",
            Education::NotCollegeGraduate => "not graduated from college",
            Education::HighSchoolOrLess => "high school diploma or less",
        }
    }

    pub fn prompt_phrase(self) -> &'static str {
        match self {
            Education::CollegeGraduate => "a college graduate",
            Education::NotCollegeGraduate => "has not graduated from college",
            Education::HighSchoolOrLess => "has a high school diploma or less",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Education::CollegeGraduate => "college",
            Education::NotCollegeGraduate => "noncollege",
            Education::HighSchoolOrLess => "highschool",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One cell of the 30-cell demographic grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserProfile {
    pub gender: Gender,
    pub age: AgeBand,
    pub education: Education,
}

impl UserProfile {
    pub fn new(gender: Gender, age: AgeBand, education: Education) -> Self {
        UserProfile {
            gender,
            age,
            education,
        }
    }

    /// Stable ASCII identifier, e.g. `male-18to29-college`.
    pub fn slug(&self) -> String {
        format!(
            "{}-{}-{}",
            self.gender.token(),
            self.age.slug(),
            self.education.slug()
        )
    }
}

impl std::fmt::Display for UserProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.gender.token(),
            self.age.token(),
            self.education.token()
        )
    }
}

/// A demographic axis along which comments are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewId {
    Gender,
    Age,
    Education,
}

impl ViewId {
    pub const ALL: [ViewId; 3] = [ViewId::Gender, ViewId::Age, ViewId::Education];

    /// Number of subpopulation groups under this view.
    pub fn group_count(self) -> usize {
        match self {
            ViewId::Gender => Gender::ALL.len(),
            ViewId::Age => AgeBand::ALL.len(),
            ViewId::Education => Education::ALL.len(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViewId::Gender => "gender",
            ViewId::Age => "age",
            ViewId::Education => "education",
        }
    }
}

impl std::str::FromStr for ViewId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gender" | "g" => Ok(ViewId::Gender),
            "age" | "a" => Ok(ViewId::Age),
            "education" | "e" => Ok(ViewId::Education),
            other => Err(Error::Validation(format!("unknown view: {other}"))),
        }
    }
}

/// A rendered system/context prompt pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub context: String,
}

/// All 30 grid cells in lexicographic (gender, age, education) order.
pub fn enumerate_profiles() -> Vec<UserProfile> {
    let mut out = Vec::with_capacity(30);
    for gender in Gender::ALL {
        for age in AgeBand::ALL {
            for education in Education::ALL {
                out.push(UserProfile::new(gender, age, education));
            }
        }
    }
    out
}

/// Index of the profile's attribute within the view's enumeration.
pub fn group_index(profile: &UserProfile, view: ViewId) -> usize {
    match view {
        ViewId::Gender => profile.gender.index(),
        ViewId::Age => profile.age.index(),
        ViewId::Education => profile.education.index(),
    }
}

fn render_template(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Prompt instructing the LLM to comment on a news item in character.
pub fn render_generation_prompt(profile: &UserProfile, news_text: &str) -> PromptPair {
    PromptPair {
        system: render_template(
            GENERATION_SYSTEM,
            &[
                ("gender", profile.gender.prompt_phrase()),
                ("age", profile.age.prompt_phrase()),
                ("education", profile.education.prompt_phrase()),
            ],
        ),
        context: render_template(GENERATION_CONTEXT, &[("news", news_text)]),
    }
}

/// Prompt asking the LLM for a 0/1 veracity judgment. The comment-related
/// sentences and context block appear only when comments are supplied; an
/// empty list counts as no comments.
pub fn render_judgment_prompt(news_text: &str, comments: Option<&[String]>) -> PromptPair {
    match comments {
        Some(list) if !list.is_empty() => {
            let joined = list.join(", ");
            PromptPair {
                system: JUDGMENT_SYSTEM_WITH.to_string(),
                context: render_template(
                    JUDGMENT_CONTEXT_WITH,
                    &[("news", news_text), ("comments", joined.as_str())],
                ),
            }
        }
        _ => PromptPair {
            system: JUDGMENT_SYSTEM_NO.to_string(),
            context: render_template(JUDGMENT_CONTEXT_NO, &[("news", news_text)]),
        },
    }
}

/// Prompt asking the LLM to infer a commenter's demographic profile.
pub fn render_profile_prediction_prompt(news_text: &str, comment_text: &str) -> PromptPair {
    PromptPair {
        system: PROFILE_SYSTEM.to_string(),
        context: render_template(
            PROFILE_CONTEXT,
            &[("news", news_text), ("comment", comment_text)],
        ),
    }
}

struct SynonymTable {
    gender: HashMap<String, Gender>,
    age: HashMap<String, AgeBand>,
    education: HashMap<String, Education>,
}

#[derive(Deserialize)]
struct RawSynonyms {
    gender: HashMap<String, Vec<String>>,
    age: HashMap<String, Vec<String>>,
    education: HashMap<String, Vec<String>>,
}

fn build_table<T: Copy>(
    raw: &HashMap<String, Vec<String>>,
    canon: &[(T, &str)],
) -> HashMap<String, T> {
    let mut map = HashMap::new();
    for (value, token) in canon {
        if let Some(forms) = raw.get(*token) {
            for form in forms {
                map.insert(form.to_lowercase(), *value);
            }
        }
        map.insert(token.to_lowercase(), *value);
    }
    map
}

fn synonyms() -> &'static SynonymTable {
    static TABLE: OnceLock<SynonymTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let raw: RawSynonyms =
            serde_json::from_str(SYNONYMS_JSON).expect("bundled synonym map is valid JSON");
        SynonymTable {
            gender: build_table(
                &raw.gender,
                &Gender::ALL.map(|g| (g, g.token())),
            ),
            age: build_table(&raw.age, &AgeBand::ALL.map(|a| (a, a.token()))),
            education: build_table(
                &raw.education,
                &Education::ALL.map(|e| (e, e.token())),
            ),
        }
    })
}

fn normalize_value(raw: &str) -> String {
    let trimmed = raw
        .trim()
        .trim_matches(|c: char| c == '\'' || c == '"' || c == '`' || c == '‘' || c == '’')
        .trim()
        .trim_end_matches('.')
        .trim();
    let mut out = String::with_capacity(trimmed.len());
    let mut last_space = false;
    for c in trimmed.chars() {
        if c.is_whitespace() {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(c.to_ascii_lowercase());
            last_space = false;
        }
    }
    out
}

fn lookup<T: Copy>(map: &HashMap<String, T>, value: &str) -> Option<T> {
    if let Some(v) = map.get(value) {
        return Some(*v);
    }
    for article in ["a ", "an "] {
        if let Some(rest) = value.strip_prefix(article) {
            if let Some(v) = map.get(rest) {
                return Some(*v);
            }
        }
    }
    None
}

/// Extract `key: value` from free-form text, case-insensitively.
fn extract_field(lower: &str, keys: &[&str]) -> Option<String> {
    for key in keys {
        let mut search_from = 0;
        while let Some(rel) = lower[search_from..].find(key) {
            let key_start = search_from + rel;
            let mut rest = lower[key_start + key.len()..].chars().peekable();
            let mut consumed = key_start + key.len();
            // Skip closing quotes and whitespace between the key and its delimiter.
            while let Some(&c) = rest.peek() {
                if c == '\'' || c == '"' || c == '’' || c.is_whitespace() {
                    consumed += c.len_utf8();
                    rest.next();
                } else {
                    break;
                }
            }
            match rest.peek() {
                Some(&c) if c == ':' || c == '=' => {
                    consumed += c.len_utf8();
                    let tail = &lower[consumed..];
                    let end = tail
                        .find(|c: char| c == ';' || c == ',' || c == '}' || c == '\n')
                        .unwrap_or(tail.len());
                    return Some(tail[..end].to_string());
                }
                _ => {
                    // Key matched but no delimiter follows; keep scanning.
                    search_from = key_start + key.len();
                }
            }
        }
    }
    None
}

/// Parse an LLM profile-prediction response into a grid cell.
///
/// Field values are matched case-insensitively against the bundled synonym
/// map; anything unmatched yields an error carrying the raw text so the
/// caller can retry or drop the record.
pub fn parse_profile_prediction(text: &str) -> Result<UserProfile> {
    let lower = text.to_lowercase();
    let table = synonyms();

    let gender_raw = extract_field(&lower, &["gender"]).ok_or_else(|| Error::ProfileParse {
        reason: "no gender field".into(),
        raw: text.to_string(),
    })?;
    // "education" alone would also match "education level"; try the longer
    // key first so the value never starts at "level".
    let education_raw =
        extract_field(&lower, &["education level", "education"]).ok_or_else(|| {
            Error::ProfileParse {
                reason: "no education field".into(),
                raw: text.to_string(),
            }
        })?;
    let age_raw = extract_field(&lower, &["age"]).ok_or_else(|| Error::ProfileParse {
        reason: "no age field".into(),
        raw: text.to_string(),
    })?;

    let gender = lookup(&table.gender, &normalize_value(&gender_raw)).ok_or_else(|| {
        Error::ProfileParse {
            reason: format!("unrecognized gender value {gender_raw:?}"),
            raw: text.to_string(),
        }
    })?;
    let age = lookup(&table.age, &normalize_value(&age_raw)).ok_or_else(|| Error::ProfileParse {
        reason: format!("unrecognized age value {age_raw:?}"),
        raw: text.to_string(),
    })?;
    let education =
        lookup(&table.education, &normalize_value(&education_raw)).ok_or_else(|| {
            Error::ProfileParse {
                reason: format!("unrecognized education value {education_raw:?}"),
                raw: text.to_string(),
            }
        })?;

    Ok(UserProfile::new(gender, age, education))
}

/// The canonical answer line Prompt 3 asks for, used for round-trip checks.
pub fn canonical_profile_answer(profile: &UserProfile) -> String {
    format!(
        "{{'gender': {}; 'age': {}; 'education level': {}}}",
        profile.gender.token(),
        profile.age.token(),
        profile.education.token()
    )
}
