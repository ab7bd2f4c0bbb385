use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{PromptError, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    Article,
    Exemplars,
    Knowledge,
    Cue,
}

impl Placeholder {
    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Article => "article",
            Placeholder::Exemplars => "exemplars",
            Placeholder::Knowledge => "knowledge",
            Placeholder::Cue => "cue",
        }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{{{}}}}}", self.name())
    }
}

impl FromStr for Placeholder {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "article" => Ok(Placeholder::Article),
            "exemplars" => Ok(Placeholder::Exemplars),
            "knowledge" => Ok(Placeholder::Knowledge),
            "cue" => Ok(Placeholder::Cue),
            other => Err(PromptError::UnknownPlaceholder(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Placeholder),
}

/// Prompt template with `{{name}}` placeholders.
///
/// Parsed once; rendering is a single pass, so substituted text that happens
/// to contain `{{...}}` is never expanded again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self, PromptError> {
        let mut segments = Vec::new();
        let mut rest = source;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| PromptError::UnknownPlaceholder(after.chars().take(20).collect()))?;
            if start > 0 {
                segments.push(Segment::Text(rest[..start].to_string()));
            }
            segments.push(Segment::Slot(after[..end].parse()?));
            rest = &after[end + 2..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        Ok(Self {
            source: source.to_string(),
            segments,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn has(&self, placeholder: Placeholder) -> bool {
        self.segments.contains(&Segment::Slot(placeholder))
    }

    pub(crate) fn require(&self, strategy: Strategy, required: &[Placeholder]) -> Result<(), PromptError> {
        for &p in required {
            if !self.has(p) {
                return Err(PromptError::MissingPlaceholder {
                    strategy,
                    placeholder: p.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Substitutes each placeholder with `fill(placeholder)`.
    pub fn render(&self, fill: impl Fn(Placeholder) -> String) -> String {
        let mut out = String::with_capacity(self.source.len() * 2);
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(p) => out.push_str(&fill(*p)),
            }
        }
        out
    }
}

pub const COT_CUE: &str =
    "Think step-by-step: What events happen in the news and how might they affect the company's stock?";

pub const ANALOGY_CUE: &str = "Reason by analogy: compare the news to classify with the historical \
examples above, name the closest precedent, and explain step by step how the events are likely to \
move the company's stock.";

const ANSWER_LINE: &str = "Respond with one line in the form: Final answer: <Positive|Negative|Neutral>";
const REASONED_ANSWER: &str = "Write your reasoning as numbered steps, then end with one line in the form: \
Final answer: <Positive|Negative|Neutral>";

const CLASSIFY_HEADER: &str = "You are a financial analyst. Read the news below and judge its impact on \
the company's stock.\nClassify the sentiment toward the stock as Positive, Negative, or Neutral.";

const ANALOGY_HEADER: &str = "You are a financial analyst. Read the news and reason step-by-step about its \
impact on the company's stock, then output Positive/Negative/Neutral.\nEach example below pairs a past \
news excerpt with the causal chain that linked it to the market outcome, and the sentiment that followed.";

pub fn default_template_source(strategy: Strategy) -> String {
    match strategy {
        Strategy::ZeroShot => format!("{CLASSIFY_HEADER}\n\n{{{{article}}}}\n\n{ANSWER_LINE}\n"),
        Strategy::FewShot => format!(
            "{CLASSIFY_HEADER}\nLabeled examples:\n\n{{{{exemplars}}}}\n\n{{{{article}}}}\n\n{ANSWER_LINE}\n"
        ),
        Strategy::CoT => {
            format!("{CLASSIFY_HEADER}\n\n{{{{article}}}}\n\n{{{{cue}}}}\n{REASONED_ANSWER}\n")
        }
        Strategy::DKCoT => format!(
            "{CLASSIFY_HEADER}\n\n{{{{knowledge}}}}\n\n{{{{article}}}}\n\n{{{{cue}}}}\n{REASONED_ANSWER}\n"
        ),
        Strategy::ADFCoT => format!(
            "{ANALOGY_HEADER}\n\n{{{{exemplars}}}}\n\n{{{{article}}}}\n\n{{{{cue}}}}\n{REASONED_ANSWER}\n"
        ),
    }
}

/// One template per strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: [Template; 5],
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = Strategy::ALL.map(|s| {
            Template::parse(&default_template_source(s)).expect("built-in templates parse")
        });
        Self { templates }
    }
}

impl TemplateSet {
    pub fn get(&self, strategy: Strategy) -> &Template {
        &self.templates[strategy.index()]
    }

    pub fn set(&mut self, strategy: Strategy, template: Template) {
        self.templates[strategy.index()] = template;
    }
}
