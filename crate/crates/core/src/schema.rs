//! Variable declarations for a survey dataset.
//!
//! A schema is a list of [`VariableSpec`] records, usually loaded from a
//! declarative text file with one variable per line:
//!
//! ```text
//! # name      kind        role          options
//! anopheles   discrete    response
//! season      nominal     explanatory   levels=1,2,3,4
//! rainfall    continuous  explanatory   recode=4
//! village     nominal     fixed-effect-group levels=v1,v2,v3
//! house       nominal     level-key     levels=h1,h2,h3,h4
//! ```
//!
//! Fields are whitespace-separated; `levels=` lists nominal labels in
//! declaration order (the first label is the dummy-coding reference) and
//! `recode=` requests quantile recoding into that many classes.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// What kind of values a variable holds.
#[derive(Debug, Clone, PartialEq)]
pub enum VarKind {
    /// Categorical with a fixed, ordered list of admissible labels.
    Nominal { levels: Vec<String> },
    /// Integer-valued numeric.
    Discrete,
    /// Real-valued numeric.
    Continuous,
}

impl VarKind {
    pub fn is_nominal(&self) -> bool {
        matches!(self, VarKind::Nominal { .. })
    }

    pub fn is_numeric(&self) -> bool {
        !self.is_nominal()
    }
}

/// How a variable participates in modeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    /// The count outcome. Exactly one per schema.
    Response,
    /// A candidate covariate.
    Explanatory,
    /// A grouping unit used only for fold construction, never encoded.
    LevelKey,
    /// A grouping unit that may additionally enter as a fixed effect
    /// (the `*-village` scenarios).
    FixedEffectGroup,
}

impl fmt::Display for VarRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VarRole::Response => "response",
            VarRole::Explanatory => "explanatory",
            VarRole::LevelKey => "level-key",
            VarRole::FixedEffectGroup => "fixed-effect-group",
        };
        f.write_str(s)
    }
}

/// Declaration of one variable: name, kind, role, and optional recoding.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    pub role: VarRole,
    /// Number of quantile classes for the recoded scenarios (3 or 4).
    pub recode: Option<usize>,
}

impl VariableSpec {
    pub fn nominal(name: &str, role: VarRole, levels: &[&str]) -> Self {
        VariableSpec {
            name: name.to_string(),
            kind: VarKind::Nominal {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
            role,
            recode: None,
        }
    }

    pub fn numeric(name: &str, role: VarRole, kind: VarKind) -> Self {
        VariableSpec {
            name: name.to_string(),
            kind,
            role,
            recode: None,
        }
    }

    pub fn with_recode(mut self, bins: usize) -> Self {
        self.recode = Some(bins);
        self
    }
}

/// A validated list of variable declarations with name lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    vars: Vec<VariableSpec>,
    by_name: HashMap<String, usize>,
}

impl Schema {
    /// Validates the declarations and builds the schema.
    ///
    /// Enforced invariants: unique names; nominal variables declare at
    /// least two distinct levels; exactly one response, of discrete kind;
    /// level keys and fixed-effect groups are nominal; recoding applies
    /// only to numeric variables with 3 or 4 classes.
    pub fn new(vars: Vec<VariableSpec>) -> Result<Schema> {
        let mut by_name = HashMap::new();
        let mut n_response = 0usize;
        for (i, v) in vars.iter().enumerate() {
            if v.name.is_empty()
                || v.name
                    .chars()
                    .any(|c| c.is_whitespace() || matches!(c, ':' | '=' | ','))
            {
                return Err(Error::Schema(format!(
                    "variable name '{}' may not be empty or contain whitespace, ':', '=', ','",
                    v.name
                )));
            }
            if by_name.insert(v.name.clone(), i).is_some() {
                return Err(Error::Schema(format!(
                    "duplicate variable name '{}'",
                    v.name
                )));
            }
            match &v.kind {
                VarKind::Nominal { levels } => {
                    if levels.len() < 2 {
                        return Err(Error::Schema(format!(
                            "nominal variable '{}' must declare at least 2 levels",
                            v.name
                        )));
                    }
                    let mut seen = std::collections::HashSet::new();
                    for l in levels {
                        if l.is_empty() || l.chars().any(|c| c.is_whitespace() || c == ',') {
                            return Err(Error::Schema(format!(
                                "level '{}' of '{}' may not be empty or contain whitespace or ','",
                                l, v.name
                            )));
                        }
                        if !seen.insert(l) {
                            return Err(Error::Schema(format!(
                                "nominal variable '{}' repeats level '{}'",
                                v.name, l
                            )));
                        }
                    }
                }
                VarKind::Discrete | VarKind::Continuous => {}
            }
            match v.role {
                VarRole::Response => {
                    n_response += 1;
                    if v.kind != VarKind::Discrete {
                        return Err(Error::Schema(format!(
                            "response '{}' must be a numeric-discrete count",
                            v.name
                        )));
                    }
                }
                VarRole::LevelKey | VarRole::FixedEffectGroup => {
                    if !v.kind.is_nominal() {
                        return Err(Error::Schema(format!(
                            "grouping variable '{}' must be nominal",
                            v.name
                        )));
                    }
                }
                VarRole::Explanatory => {}
            }
            if let Some(bins) = v.recode {
                if !v.kind.is_numeric() {
                    return Err(Error::Schema(format!(
                        "recode declared on non-numeric variable '{}'",
                        v.name
                    )));
                }
                if bins != 3 && bins != 4 {
                    return Err(Error::Schema(format!(
                        "recode on '{}' must use 3 or 4 classes, got {}",
                        v.name, bins
                    )));
                }
            }
        }
        if n_response != 1 {
            return Err(Error::Schema(format!(
                "schema must declare exactly one response variable, found {}",
                n_response
            )));
        }
        Ok(Schema { vars, by_name })
    }

    pub fn vars(&self) -> &[VariableSpec] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn var(&self, index: usize) -> &VariableSpec {
        &self.vars[index]
    }

    pub fn response_index(&self) -> usize {
        self.vars
            .iter()
            .position(|v| v.role == VarRole::Response)
            .expect("validated schema has a response")
    }

    /// Replaces one variable declaration, revalidating the schema.
    pub fn replace(&self, index: usize, spec: VariableSpec) -> Result<Schema> {
        let mut vars = self.vars.clone();
        vars[index] = spec;
        Schema::new(vars)
    }

    /// Parses the one-record-per-line schema text format.
    pub fn parse(text: &str) -> Result<Schema> {
        let mut vars = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let name = tokens.next().unwrap().to_string();
            let kind_tok = tokens
                .next()
                .ok_or_else(|| Error::Schema(format!("line {}: missing kind", lineno + 1)))?;
            let role_tok = tokens
                .next()
                .ok_or_else(|| Error::Schema(format!("line {}: missing role", lineno + 1)))?;
            let mut levels: Option<Vec<String>> = None;
            let mut recode: Option<usize> = None;
            for opt in tokens {
                if let Some(list) = opt.strip_prefix("levels=") {
                    levels = Some(list.split(',').map(|s| s.to_string()).collect());
                } else if let Some(b) = opt.strip_prefix("recode=") {
                    recode = Some(b.parse().map_err(|_| {
                        Error::Schema(format!("line {}: bad recode count '{}'", lineno + 1, b))
                    })?);
                } else {
                    return Err(Error::Schema(format!(
                        "line {}: unknown option '{}'",
                        lineno + 1,
                        opt
                    )));
                }
            }
            let has_levels = levels.is_some();
            let kind = match kind_tok {
                "nominal" => VarKind::Nominal {
                    levels: levels.ok_or_else(|| {
                        Error::Schema(format!(
                            "line {}: nominal variable '{}' needs levels=",
                            lineno + 1,
                            name
                        ))
                    })?,
                },
                "discrete" => VarKind::Discrete,
                "continuous" => VarKind::Continuous,
                other => {
                    return Err(Error::Schema(format!(
                        "line {}: unknown kind '{}'",
                        lineno + 1,
                        other
                    )))
                }
            };
            if kind.is_numeric() && has_levels {
                return Err(Error::Schema(format!(
                    "line {}: levels= given for numeric variable '{}'",
                    lineno + 1,
                    name
                )));
            }
            let role = match role_tok {
                "response" => VarRole::Response,
                "explanatory" => VarRole::Explanatory,
                "level-key" => VarRole::LevelKey,
                "fixed-effect-group" => VarRole::FixedEffectGroup,
                other => {
                    return Err(Error::Schema(format!(
                        "line {}: unknown role '{}'",
                        lineno + 1,
                        other
                    )))
                }
            };
            vars.push(VariableSpec {
                name,
                kind,
                role,
                recode,
            });
        }
        Schema::new(vars)
    }

    /// Renders the schema back into the text format accepted by [`Schema::parse`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for v in &self.vars {
            let kind = match &v.kind {
                VarKind::Nominal { .. } => "nominal",
                VarKind::Discrete => "discrete",
                VarKind::Continuous => "continuous",
            };
            out.push_str(&format!("{} {} {}", v.name, kind, v.role));
            if let VarKind::Nominal { levels } = &v.kind {
                out.push_str(&format!(" levels={}", levels.join(",")));
            }
            if let Some(b) = v.recode {
                out.push_str(&format!(" recode={}", b));
            }
            out.push('\n');
        }
        out
    }
}
