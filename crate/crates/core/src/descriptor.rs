//! Workflow descriptors in the Cytomine-0.1 layout.
//!
//! A descriptor names the container image a workflow ships in, the command
//! line its wrapper expects, and the typed parameters a user may set. The
//! command line uses whole-token `[PARAM_ID]` placeholders which are expanded
//! into `--flag value` pairs by [`render_cli_args`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// The only descriptor schema understood by this crate.
pub const SUPPORTED_SCHEMA: &str = "cytomine-0.1";

/// Environment names the job script reserves for the data folders.
pub const RESERVED_ENV_NAMES: [&str; 3] = ["IN_PATH", "OUT_PATH", "GT_PATH"];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("malformed descriptor document: {0}")]
    MalformedDocument(String),
    #[error("unsupported descriptor schema {found:?} (expected \"{SUPPORTED_SCHEMA}\")")]
    UnsupportedSchema { found: String },
    #[error("invalid descriptor field `{field}`: {reason}")]
    InvalidDescriptor { field: String, reason: String },
    #[error("missing required parameter `{0}`")]
    MissingRequiredParam(String),
    #[error("parameter `{param}` expects a {expected} value, got {got:?}")]
    TypeMismatch {
        param: String,
        expected: ValueType,
        got: String,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> DescriptorError {
    DescriptorError::InvalidDescriptor {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueType {
    Number,
    String,
    Boolean,
}

impl ValueType {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Number => "Number",
            ValueType::String => "String",
            ValueType::Boolean => "Boolean",
        }
    }

    fn from_type_name(name: &str) -> Option<Self> {
        match name {
            "Number" => Some(ValueType::Number),
            "String" => Some(ValueType::String),
            "Boolean" => Some(ValueType::Boolean),
            _ => None,
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Boolean(bool),
    Number(f64),
    String(String),
}

impl ParamValue {
    pub fn value_type(&self) -> ValueType {
        match self {
            ParamValue::Number(_) => ValueType::Number,
            ParamValue::String(_) => ValueType::String,
            ParamValue::Boolean(_) => ValueType::Boolean,
        }
    }

    /// Textual form shared by command-line and environment rendering.
    ///
    /// Numbers use the shortest decimal that parses back to the same `f64`.
    pub fn render(&self) -> String {
        match self {
            ParamValue::Number(n) => format!("{n}"),
            ParamValue::String(s) => s.clone(),
            ParamValue::Boolean(b) => b.to_string(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            ParamValue::Number(n) => serde_json::Number::from_f64(*n)
                .map(Value::Number)
                .unwrap_or(Value::Null),
            ParamValue::String(s) => Value::String(s.clone()),
            ParamValue::Boolean(b) => Value::Bool(*b),
        }
    }

    fn from_json(value: &Value, expected: ValueType) -> Option<Self> {
        match (expected, value) {
            (ValueType::Number, Value::Number(n)) => n.as_f64().map(ParamValue::Number),
            (ValueType::String, Value::String(s)) => Some(ParamValue::String(s.clone())),
            (ValueType::Boolean, Value::Bool(b)) => Some(ParamValue::Boolean(*b)),
            _ => None,
        }
    }

    fn conforms(&self, expected: ValueType) -> bool {
        match self {
            ParamValue::Number(n) => expected == ValueType::Number && n.is_finite(),
            other => other.value_type() == expected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub id: String,
    pub display_name: String,
    pub description: String,
    pub value_type: ValueType,
    pub default: Option<ParamValue>,
    pub cli_flag: String,
    pub optional: bool,
}

impl ParamSpec {
    /// Name of the environment variable carrying this parameter.
    pub fn env_name(&self) -> String {
        self.id.to_ascii_uppercase()
    }
}

/// Parameter values keyed by parameter id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamValues(BTreeMap<String, ParamValue>);

impl ParamValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, value: ParamValue) -> Option<ParamValue> {
        self.0.insert(id.into(), value)
    }

    pub fn get(&self, id: &str) -> Option<&ParamValue> {
        self.0.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.0.iter()
    }
}

impl<K: Into<String>> FromIterator<(K, ParamValue)> for ParamValues {
    fn from_iter<I: IntoIterator<Item = (K, ParamValue)>>(iter: I) -> Self {
        ParamValues(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDescriptor {
    pub name: String,
    pub schema_version: String,
    pub container_image: String,
    pub container_version: String,
    pub command_line_template: String,
    pub params: Vec<ParamSpec>,
    /// Inputs of types other than Number/String/Boolean, kept verbatim.
    pub ignored_inputs: Vec<Value>,
    /// Unrecognised top-level fields, kept verbatim.
    pub extra: Map<String, Value>,
    pub warnings: Vec<String>,
}

impl WorkflowDescriptor {
    pub fn param(&self, id: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.id == id)
    }

    /// Serializes back into the descriptor document format.
    pub fn to_document(&self) -> String {
        let mut root = Map::new();
        root.insert("name".into(), Value::String(self.name.clone()));
        root.insert(
            "schema-version".into(),
            Value::String(self.schema_version.clone()),
        );
        let mut image = Map::new();
        image.insert("image".into(), Value::String(self.container_image.clone()));
        image.insert(
            "version".into(),
            Value::String(self.container_version.clone()),
        );
        root.insert("container-image".into(), Value::Object(image));
        root.insert(
            "command-line".into(),
            Value::String(self.command_line_template.clone()),
        );
        let mut inputs: Vec<Value> = self
            .params
            .iter()
            .map(|p| {
                let mut m = Map::new();
                m.insert("id".into(), Value::String(p.id.clone()));
                m.insert("name".into(), Value::String(p.display_name.clone()));
                m.insert("description".into(), Value::String(p.description.clone()));
                m.insert("type".into(), Value::String(p.value_type.as_str().into()));
                if let Some(d) = &p.default {
                    m.insert("default-value".into(), d.to_json());
                }
                m.insert("command-line-flag".into(), Value::String(p.cli_flag.clone()));
                m.insert("optional".into(), Value::Bool(p.optional));
                Value::Object(m)
            })
            .collect();
        inputs.extend(self.ignored_inputs.iter().cloned());
        root.insert("inputs".into(), Value::Array(inputs));
        for (k, v) in &self.extra {
            root.insert(k.clone(), v.clone());
        }
        serde_json::to_string_pretty(&Value::Object(root)).expect("descriptor serializes")
    }
}

const KNOWN_TOP_LEVEL: [&str; 5] = [
    "name",
    "schema-version",
    "container-image",
    "command-line",
    "inputs",
];

fn str_field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str, DescriptorError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(invalid(path, "expected a string")),
        None => Err(invalid(path, "missing")),
    }
}

fn is_param_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Returns the placeholder name if `token` is a whole-token `[NAME]` placeholder.
pub(crate) fn placeholder_name(token: &str) -> Option<&str> {
    let inner = token.strip_prefix('[')?.strip_suffix(']')?;
    let mut chars = inner.chars();
    let first_ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic());
    (first_ok && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')).then_some(inner)
}

pub fn parse_descriptor(text: &str) -> Result<WorkflowDescriptor, DescriptorError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| DescriptorError::MalformedDocument(e.to_string()))?;
    let Value::Object(root) = root else {
        return Err(DescriptorError::MalformedDocument(
            "top level is not an object".into(),
        ));
    };

    let schema_version = match root.get("schema-version") {
        Some(Value::String(s)) if s == SUPPORTED_SCHEMA => s.clone(),
        Some(Value::String(s)) => return Err(DescriptorError::UnsupportedSchema { found: s.clone() }),
        Some(other) => {
            return Err(DescriptorError::UnsupportedSchema {
                found: other.to_string(),
            })
        }
        None => return Err(invalid("schema-version", "missing")),
    };

    let name = str_field(&root, "name", "name")?.to_string();
    if name.trim().is_empty() {
        return Err(invalid("name", "must not be empty"));
    }
    let image = match root.get("container-image") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(invalid("container-image", "expected an object")),
        None => return Err(invalid("container-image", "missing")),
    };
    let container_image = str_field(image, "image", "container-image.image")?.to_string();
    let container_version = str_field(image, "version", "container-image.version")?.to_string();
    let command_line_template = str_field(&root, "command-line", "command-line")?.to_string();

    let raw_inputs = match root.get("inputs") {
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => return Err(invalid("inputs", "expected an array")),
        None => &[],
    };

    let mut params: Vec<ParamSpec> = Vec::with_capacity(raw_inputs.len());
    let mut ignored_inputs = Vec::new();
    let mut warnings = Vec::new();
    for (i, raw) in raw_inputs.iter().enumerate() {
        let path = |f: &str| format!("inputs[{i}].{f}");
        let Value::Object(input) = raw else {
            return Err(invalid(format!("inputs[{i}]"), "expected an object"));
        };
        let type_name = str_field(input, "type", &path("type"))?;
        let Some(value_type) = ValueType::from_type_name(type_name) else {
            let id = input.get("id").and_then(Value::as_str).unwrap_or("?");
            let msg = format!("input `{id}` has unsupported type {type_name:?} and is ignored");
            log::warn!("{msg}");
            warnings.push(msg);
            ignored_inputs.push(raw.clone());
            continue;
        };
        let id = str_field(input, "id", &path("id"))?.to_string();
        if !is_param_id(&id) {
            return Err(invalid(path("id"), format!("{id:?} is not a valid parameter id")));
        }
        if params.iter().any(|p| p.id == id) {
            return Err(invalid(path("id"), format!("duplicate parameter id {id:?}")));
        }
        let env = id.to_ascii_uppercase();
        if RESERVED_ENV_NAMES.contains(&env.as_str()) {
            return Err(invalid(path("id"), format!("{env} is reserved for data folders")));
        }
        let display_name = match input.get("name") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(invalid(path("name"), "expected a string")),
            None => id.clone(),
        };
        let description = match input.get("description") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(invalid(path("description"), "expected a string")),
            None => String::new(),
        };
        let default = match input.get("default-value") {
            None | Some(Value::Null) => None,
            Some(v) => Some(ParamValue::from_json(v, value_type).ok_or_else(|| {
                invalid(path("default-value"), format!("does not conform to type {value_type}"))
            })?),
        };
        let cli_flag = match input.get("command-line-flag") {
            Some(Value::String(s)) => s.replace("@id", &id),
            Some(_) => return Err(invalid(path("command-line-flag"), "expected a string")),
            None => format!("--{id}"),
        };
        let optional = match input.get("optional") {
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(invalid(path("optional"), "expected a boolean")),
            None => false,
        };
        params.push(ParamSpec {
            id,
            display_name,
            description,
            value_type,
            default,
            cli_flag,
            optional,
        });
    }

    for token in command_line_template.split_whitespace() {
        if let Some(ph) = placeholder_name(token) {
            let upper = ph.to_ascii_uppercase();
            if !params.iter().any(|p| p.env_name() == upper) {
                return Err(invalid(
                    "command-line",
                    format!("placeholder [{upper}] has no matching input"),
                ));
            }
        }
    }

    let extra = root
        .iter()
        .filter(|(k, _)| !KNOWN_TOP_LEVEL.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    Ok(WorkflowDescriptor {
        name,
        schema_version,
        container_image,
        container_version,
        command_line_template,
        params,
        ignored_inputs,
        extra,
        warnings,
    })
}

/// Checks supplied values against the descriptor and fills in defaults.
pub fn validate_values(
    descriptor: &WorkflowDescriptor,
    supplied: &ParamValues,
) -> Result<ParamValues, DescriptorError> {
    for (id, value) in supplied.iter() {
        let spec = descriptor
            .param(id)
            .ok_or_else(|| DescriptorError::UnknownParam(id.clone()))?;
        if !value.conforms(spec.value_type) {
            return Err(DescriptorError::TypeMismatch {
                param: id.clone(),
                expected: spec.value_type,
                got: value.render(),
            });
        }
    }
    let mut out = supplied.clone();
    for spec in &descriptor.params {
        if out.contains(&spec.id) {
            continue;
        }
        match &spec.default {
            Some(d) => {
                out.insert(spec.id.clone(), d.clone());
            }
            None if spec.optional => {}
            None => return Err(DescriptorError::MissingRequiredParam(spec.id.clone())),
        }
    }
    Ok(out)
}

/// Converts `id=value` strings (as typed on a command line) into typed values.
pub fn coerce_raw_values<'a>(
    descriptor: &WorkflowDescriptor,
    raw: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<ParamValues, DescriptorError> {
    let mut out = ParamValues::new();
    for (id, text) in raw {
        let spec = descriptor
            .param(id)
            .ok_or_else(|| DescriptorError::UnknownParam(id.to_string()))?;
        let mismatch = || DescriptorError::TypeMismatch {
            param: id.to_string(),
            expected: spec.value_type,
            got: text.to_string(),
        };
        let value = match spec.value_type {
            ValueType::Number => text
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|n| n.is_finite())
                .map(ParamValue::Number)
                .ok_or_else(mismatch)?,
            ValueType::Boolean => match text.trim().to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => ParamValue::Boolean(true),
                "false" | "no" | "0" => ParamValue::Boolean(false),
                _ => return Err(mismatch()),
            },
            ValueType::String => ParamValue::String(text.to_string()),
        };
        out.insert(id, value);
    }
    Ok(out)
}

/// Expands the command-line template into argv tokens.
///
/// Boolean `true` renders the flag alone and `false` renders nothing. A
/// parameter with an empty flag renders as a bare positional value.
pub fn render_cli_args(descriptor: &WorkflowDescriptor, values: &ParamValues) -> Vec<String> {
    let mut tokens = Vec::new();
    for token in descriptor.command_line_template.split_whitespace() {
        let Some(ph) = placeholder_name(token) else {
            tokens.push(token.to_string());
            continue;
        };
        let upper = ph.to_ascii_uppercase();
        let Some(spec) = descriptor.params.iter().find(|p| p.env_name() == upper) else {
            continue;
        };
        let Some(value) = values.get(&spec.id) else {
            continue;
        };
        match (value, spec.cli_flag.is_empty()) {
            (ParamValue::Boolean(true), false) => tokens.push(spec.cli_flag.clone()),
            (ParamValue::Boolean(false), false) => {}
            (v, true) => tokens.push(v.render()),
            (v, false) => {
                tokens.push(spec.cli_flag.clone());
                tokens.push(v.render());
            }
        }
    }
    tokens
}

/// One `(NAME, value)` pair per parameter that has a value, in descriptor order.
pub fn env_assignments(descriptor: &WorkflowDescriptor, values: &ParamValues) -> Vec<(String, String)> {
    descriptor
        .params
        .iter()
        .filter_map(|p| values.get(&p.id).map(|v| (p.env_name(), v.render())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormEntry {
    pub id: String,
    pub label: String,
    pub value_type: ValueType,
    pub default: Option<ParamValue>,
    pub optional: bool,
    pub help: String,
}

pub fn describe_form(descriptor: &WorkflowDescriptor) -> Vec<FormEntry> {
    descriptor
        .params
        .iter()
        .map(|p| FormEntry {
            id: p.id.clone(),
            label: p.display_name.clone(),
            value_type: p.value_type,
            default: p.default.clone(),
            optional: p.optional,
            help: p.description.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc(inputs: Value, command_line: &str) -> String {
        json!({
            "name": "W_NucleiSegmentation-Cellpose",
            "schema-version": "cytomine-0.1",
            "container-image": {"image": "toreluik/w_nucleisegmentation-cellpose", "version": "v1.2.7"},
            "command-line": command_line,
            "inputs": inputs,
        })
        .to_string()
    }

    fn number(id: &str, default: Option<f64>, flag: &str) -> Value {
        let mut v = json!({"id": id, "name": id, "description": "", "type": "Number",
                           "command-line-flag": flag, "optional": default.is_some()});
        if let Some(d) = default {
            v["default-value"] = json!(d);
        }
        v
    }

    #[test]
    fn parses_cellpose_descriptor() {
        let text = doc(json!([number("diameter", Some(30.0), "--diameter")]), "python wrapper.py [DIAMETER]");
        let d = parse_descriptor(&text).unwrap();
        assert_eq!(d.name, "W_NucleiSegmentation-Cellpose");
        assert_eq!(d.params.len(), 1);
        assert_eq!(d.params[0].default, Some(ParamValue::Number(30.0)));
    }

    #[test]
    fn parses_empty_params() {
        let d = parse_descriptor(&doc(json!([]), "python wrapper.py")).unwrap();
        assert!(d.params.is_empty());
    }

    #[test]
    fn dangling_placeholder_is_named() {
        let err = parse_descriptor(&doc(json!([]), "run [RADIUS]")).unwrap_err();
        match err {
            DescriptorError::InvalidDescriptor { field, reason } => {
                assert_eq!(field, "command-line");
                assert!(reason.contains("RADIUS"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_schema_and_syntax() {
        let text = doc(json!([]), "run").replace("cytomine-0.1", "boutiques-0.5");
        assert_eq!(
            parse_descriptor(&text).unwrap_err(),
            DescriptorError::UnsupportedSchema { found: "boutiques-0.5".into() }
        );
        assert!(matches!(
            parse_descriptor("{\"name\": ").unwrap_err(),
            DescriptorError::MalformedDocument(_)
        ));
    }

    #[test]
    fn rejects_duplicates_and_bad_defaults() {
        let dup = doc(json!([number("a", Some(1.0), "--a"), number("a", Some(2.0), "--a")]), "x");
        assert!(matches!(parse_descriptor(&dup).unwrap_err(),
            DescriptorError::InvalidDescriptor { field, .. } if field == "inputs[1].id"));

        let mut bad = number("a", None, "--a");
        bad["default-value"] = json!("thirty");
        let err = parse_descriptor(&doc(json!([bad]), "x")).unwrap_err();
        assert!(matches!(err, DescriptorError::InvalidDescriptor { field, .. } if field == "inputs[0].default-value"));

        let reserved = doc(json!([number("in_path", Some(1.0), "--p")]), "x");
        assert!(parse_descriptor(&reserved).is_err());
    }

    #[test]
    fn image_inputs_are_ignored_with_warning() {
        let inputs = json!([
            {"id": "cytomine_id_images", "type": "ListDomain", "name": "Images"},
            number("diameter", Some(30.0), "--diameter"),
        ]);
        let d = parse_descriptor(&doc(inputs, "run [DIAMETER]")).unwrap();
        assert_eq!(d.params.len(), 1);
        assert_eq!(d.ignored_inputs.len(), 1);
        assert_eq!(d.warnings.len(), 1);
        assert_eq!(parse_descriptor(&d.to_document()).unwrap(), d);
    }

    #[test]
    fn unknown_top_level_fields_survive() {
        let mut v: Value = serde_json::from_str(&doc(json!([]), "run")).unwrap();
        v["description"] = json!("segments nuclei");
        let d = parse_descriptor(&v.to_string()).unwrap();
        assert_eq!(d.extra.get("description"), Some(&json!("segments nuclei")));
        assert!(d.to_document().contains("segments nuclei"));
    }

    #[test]
    fn cytomine_at_id_flag_expands() {
        let d = parse_descriptor(&doc(json!([number("diameter", Some(1.0), "--@id")]), "r [DIAMETER]")).unwrap();
        assert_eq!(d.params[0].cli_flag, "--diameter");
    }

    #[test]
    fn validate_fills_defaults() {
        let d = parse_descriptor(&doc(json!([number("diameter", Some(30.0), "--diameter")]), "r")).unwrap();
        let v = validate_values(&d, &ParamValues::new()).unwrap();
        assert_eq!(v.get("diameter"), Some(&ParamValue::Number(30.0)));
    }

    #[test]
    fn validate_reports_missing_unknown_and_mismatch() {
        let d = parse_descriptor(&doc(json!([number("threshold", None, "--threshold")]), "r")).unwrap();
        assert_eq!(
            validate_values(&d, &ParamValues::new()).unwrap_err(),
            DescriptorError::MissingRequiredParam("threshold".into())
        );
        let unknown: ParamValues = [("nope", ParamValue::Number(1.0))].into_iter().collect();
        assert_eq!(
            validate_values(&d, &unknown).unwrap_err(),
            DescriptorError::UnknownParam("nope".into())
        );
        let wrong: ParamValues = [("threshold", ParamValue::String("high".into()))].into_iter().collect();
        assert!(matches!(
            validate_values(&d, &wrong).unwrap_err(),
            DescriptorError::TypeMismatch { expected: ValueType::Number, .. }
        ));
    }

    #[test]
    fn validate_mixed_defaults() {
        // hand-applied defaulting: a is absent so takes its default 1, b is supplied.
        let inputs = json!([
            number("a", Some(1.0), "--a"),
            {"id": "b", "type": "Boolean", "default-value": false, "command-line-flag": "--b", "optional": true},
        ]);
        let d = parse_descriptor(&doc(inputs, "r")).unwrap();
        let supplied: ParamValues = [("b", ParamValue::Boolean(true))].into_iter().collect();
        let expected: ParamValues =
            [("a", ParamValue::Number(1.0)), ("b", ParamValue::Boolean(true))].into_iter().collect();
        assert_eq!(validate_values(&d, &supplied).unwrap(), expected);
    }

    #[test]
    fn render_substitutes_placeholders() {
        let d = parse_descriptor(&doc(json!([number("diameter", None, "--diameter")]), "run [DIAMETER]")).unwrap();
        let v: ParamValues = [("diameter", ParamValue::Number(30.0))].into_iter().collect();
        assert_eq!(render_cli_args(&d, &v), ["run", "--diameter", "30"]);

        let inputs = json!([number("diameter", None, "--diameter"), number("prob", None, "--prob_threshold")]);
        let d = parse_descriptor(&doc(inputs, "seg [DIAMETER] [PROB]")).unwrap();
        let v: ParamValues =
            [("diameter", ParamValue::Number(17.0)), ("prob", ParamValue::Number(0.5))].into_iter().collect();
        assert_eq!(render_cli_args(&d, &v), ["seg", "--diameter", "17", "--prob_threshold", "0.5"]);
    }

    #[test]
    fn render_boolean_presence() {
        let inputs = json!([{"id": "use_gpu", "type": "Boolean", "command-line-flag": "--gpu"}]);
        let d = parse_descriptor(&doc(inputs, "run [USE_GPU]")).unwrap();
        let off: ParamValues = [("use_gpu", ParamValue::Boolean(false))].into_iter().collect();
        assert_eq!(render_cli_args(&d, &off), ["run"]);
        let on: ParamValues = [("use_gpu", ParamValue::Boolean(true))].into_iter().collect();
        assert_eq!(render_cli_args(&d, &on), ["run", "--gpu"]);
    }

    #[test]
    fn env_names_and_order() {
        let d = parse_descriptor(&doc(json!([number("diameter", None, "--diameter")]), "r")).unwrap();
        let v: ParamValues = [("diameter", ParamValue::Number(30.0))].into_iter().collect();
        assert_eq!(env_assignments(&d, &v), [("DIAMETER".to_string(), "30".to_string())]);

        let empty = parse_descriptor(&doc(json!([]), "r")).unwrap();
        assert!(env_assignments(&empty, &ParamValues::new()).is_empty());

        let inputs = json!([number("diameter", None, "--d"), {"id": "use_gpu", "type": "Boolean", "command-line-flag": "--gpu"}]);
        let d = parse_descriptor(&doc(inputs, "r")).unwrap();
        let v: ParamValues =
            [("use_gpu", ParamValue::Boolean(true)), ("diameter", ParamValue::Number(17.0))].into_iter().collect();
        assert_eq!(
            env_assignments(&d, &v),
            [("DIAMETER".to_string(), "17".to_string()), ("USE_GPU".to_string(), "true".to_string())]
        );
    }

    #[test]
    fn form_entries_follow_declaration_order() {
        let inputs = json!([number("c", Some(1.0), "--c"), number("a", Some(2.0), "--a"), number("b", None, "--b")]);
        let form = describe_form(&parse_descriptor(&doc(inputs, "r")).unwrap());
        let ids: Vec<_> = form.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(form[0].default, Some(ParamValue::Number(1.0)));
        assert!(describe_form(&parse_descriptor(&doc(json!([]), "r")).unwrap()).is_empty());
    }

    #[test]
    fn coerce_parses_by_declared_type() {
        let inputs = json!([number("d", None, "--d"), {"id": "g", "type": "Boolean", "command-line-flag": "--g"}]);
        let desc = parse_descriptor(&doc(inputs, "r")).unwrap();
        let v = coerce_raw_values(&desc, [("d", "17"), ("g", "true")]).unwrap();
        assert_eq!(v.get("d"), Some(&ParamValue::Number(17.0)));
        assert!(matches!(
            coerce_raw_values(&desc, [("d", "abc")]).unwrap_err(),
            DescriptorError::TypeMismatch { .. }
        ));
    }
}
