//! Schema parsing and compilation into a model plan.
//!
//! The schema language is a restricted protobuf-message subset:
//!
//! ```text
//! message <Name> {
//!   optional (float|string) <field> = <tag>;
//! }
//! ```
//!
//! Line comments start with `//`. Only `optional float` and
//! `optional string` fields exist; anything else is rejected loudly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field kind in a record schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    String,
    Scalar,
}

/// One schema field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub tag: u32,
}

/// Parsed record schema: a message name plus ordered fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl Schema {
    pub fn string_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.kind == FieldKind::String)
    }

    pub fn scalar_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.kind == FieldKind::Scalar)
    }
}

/// The bundled address schema fixture.
pub const ADDRESS_SCHEMA: &str = include_str!("../schemas/address.schema");

/// Parses schema source text. Fields come back in declaration order.
pub fn parse_schema(text: &str) -> Result<Schema> {
    let mut tokens = tokenize(text);
    let tok = |t: &mut std::vec::IntoIter<Token>, what: &str, line: usize| -> Result<Token> {
        t.next().ok_or_else(|| Error::SchemaParse {
            line,
            message: format!("unexpected end of input, expected {what}"),
        })
    };

    let mut it = std::mem::take(&mut tokens).into_iter();
    let first = tok(&mut it, "`message`", 1)?;
    if first.text != "message" {
        return Err(Error::SchemaParse {
            line: first.line,
            message: format!("expected `message`, found `{}`", first.text),
        });
    }
    let name_tok = tok(&mut it, "message name", first.line)?;
    if !is_identifier(&name_tok.text) {
        return Err(Error::SchemaParse {
            line: name_tok.line,
            message: format!("invalid message name `{}`", name_tok.text),
        });
    }
    let open = tok(&mut it, "`{`", name_tok.line)?;
    if open.text != "{" {
        return Err(Error::SchemaParse {
            line: open.line,
            message: format!("expected `{{`, found `{}`", open.text),
        });
    }

    let mut fields: Vec<FieldSpec> = Vec::new();
    loop {
        let t = tok(&mut it, "`optional` or `}`", open.line)?;
        if t.text == "}" {
            if let Some(extra) = it.next() {
                return Err(Error::SchemaParse {
                    line: extra.line,
                    message: format!("unexpected `{}` after closing brace", extra.text),
                });
            }
            break;
        }
        if t.text != "optional" {
            return Err(Error::SchemaParse {
                line: t.line,
                message: format!("expected `optional`, found `{}`", t.text),
            });
        }
        let ty = tok(&mut it, "field type", t.line)?;
        let kind = match ty.text.as_str() {
            "float" => FieldKind::Scalar,
            "string" => FieldKind::String,
            other if is_identifier(other) => {
                return Err(Error::UnsupportedType {
                    keyword: other.to_string(),
                    line: ty.line,
                })
            }
            other => {
                return Err(Error::SchemaParse {
                    line: ty.line,
                    message: format!("expected field type, found `{other}`"),
                })
            }
        };
        let fname = tok(&mut it, "field name", ty.line)?;
        if !is_identifier(&fname.text) {
            return Err(Error::SchemaParse {
                line: fname.line,
                message: format!("invalid field name `{}`", fname.text),
            });
        }
        let eq = tok(&mut it, "`=`", fname.line)?;
        if eq.text != "=" {
            return Err(Error::SchemaParse {
                line: eq.line,
                message: format!("expected `=`, found `{}`", eq.text),
            });
        }
        let tag_tok = tok(&mut it, "field tag", eq.line)?;
        let tag: u32 = tag_tok.text.parse().map_err(|_| Error::SchemaParse {
            line: tag_tok.line,
            message: format!("invalid field tag `{}`", tag_tok.text),
        })?;
        if tag == 0 {
            return Err(Error::SchemaParse {
                line: tag_tok.line,
                message: "field tags must be positive".into(),
            });
        }
        let semi = tok(&mut it, "`;`", tag_tok.line)?;
        if semi.text != ";" {
            return Err(Error::SchemaParse {
                line: semi.line,
                message: format!("expected `;`, found `{}`", semi.text),
            });
        }
        if fields.iter().any(|f| f.tag == tag) {
            return Err(Error::DuplicateTag {
                tag,
                line: tag_tok.line,
            });
        }
        if fields.iter().any(|f| f.name == fname.text) {
            return Err(Error::DuplicateField {
                name: fname.text,
                line: fname.line,
            });
        }
        fields.push(FieldSpec {
            name: fname.text,
            kind,
            tag,
        });
    }

    Ok(Schema {
        name: name_tok.text,
        fields,
    })
}

/// Canonical text form of a schema; comments are not preserved.
pub fn print_schema(schema: &Schema) -> String {
    let mut out = format!("message {} {{\n", schema.name);
    for f in &schema.fields {
        let ty = match f.kind {
            FieldKind::Scalar => "float",
            FieldKind::String => "string",
        };
        out.push_str(&format!("  optional {ty} {} = {};\n", f.name, f.tag));
    }
    out.push_str("}\n");
    out
}

struct Token {
    text: String,
    line: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let code = match line.find("//") {
            Some(pos) => &line[..pos],
            None => line,
        };
        let mut chars = code.char_indices().peekable();
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() {
                chars.next();
            } else if c == '{' || c == '}' || c == '=' || c == ';' {
                tokens.push(Token {
                    text: c.to_string(),
                    line: lineno + 1,
                });
                chars.next();
            } else {
                let start = i;
                let mut end = i;
                while let Some(&(j, c2)) = chars.peek() {
                    if c2.is_whitespace() || "{}=;".contains(c2) {
                        break;
                    }
                    end = j + c2.len_utf8();
                    chars.next();
                }
                tokens.push(Token {
                    text: code[start..end].to_string(),
                    line: lineno + 1,
                });
            }
        }
    }
    tokens
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Model variant a schema is compiled into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Tree-recursive model: a tuple over one shared string module and
    /// one scalar-pair module.
    Tuple,
    /// Baseline without tuple autoregression: the decoder broadcasts the
    /// latent to per-field modules.
    PassThrough,
    /// Single sequence model over the comma-separated text form, with the
    /// embedding size doubled.
    TextConcat,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Tuple => write!(f, "tuple"),
            Variant::PassThrough => write!(f, "pass_through"),
            Variant::TextConcat => write!(f, "text_concat"),
        }
    }
}

/// One element of a compiled tuple, in model order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanElement {
    /// A single string field.
    StringField { name: String },
    /// All scalar fields, modelled jointly and whitened as a group.
    ScalarGroup { fields: Vec<String> },
}

impl PlanElement {
    pub fn label(&self) -> String {
        match self {
            PlanElement::StringField { name } => name.clone(),
            PlanElement::ScalarGroup { fields } => fields.join("+"),
        }
    }
}

/// Root module shape of a compiled plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanRoot {
    /// Bidirectional-RNN tuple with autoregressive decoding; string
    /// fields share one string module.
    Tuple { elements: Vec<PlanElement> },
    /// Concatenate-and-broadcast tuple; each string field gets its own
    /// string module.
    SimpleTuple { elements: Vec<PlanElement> },
    /// One string module over the serialized record text.
    TextLiteral,
}

impl PlanRoot {
    pub fn elements(&self) -> &[PlanElement] {
        match self {
            PlanRoot::Tuple { elements } | PlanRoot::SimpleTuple { elements } => elements,
            PlanRoot::TextLiteral => &[],
        }
    }
}

/// Compiled description of the model a schema induces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPlan {
    pub schema: Schema,
    pub root: PlanRoot,
    pub variant: Variant,
    /// Embedding width used by every module boundary (doubled for
    /// `text_concat`).
    pub latent_dim: usize,
    /// GRU state width.
    pub state_dim: usize,
    /// Character-embedding width.
    pub char_embed_dim: usize,
}

impl ModelPlan {
    /// Number of tuple elements (1 for the text variant).
    pub fn arity(&self) -> usize {
        match &self.root {
            PlanRoot::Tuple { elements } | PlanRoot::SimpleTuple { elements } => elements.len(),
            PlanRoot::TextLiteral => 1,
        }
    }
}

/// Options for [`compile`].
#[derive(Clone, Debug)]
pub struct CompileOptions {
    pub latent_dim: usize,
    pub state_dim: usize,
    pub char_embed_dim: usize,
    pub variant: Variant,
    /// String fields to drop from the plan (pass-through variant only):
    /// callers list fields known to be always empty in their corpus.
    pub omit_fields: Vec<String>,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            latent_dim: 128,
            state_dim: 128,
            char_embed_dim: 16,
            variant: Variant::Tuple,
            omit_fields: Vec::new(),
        }
    }
}

/// Compiles a schema into a [`ModelPlan`].
///
/// String fields keep declaration order; scalar fields are grouped into
/// one joint element placed last.
pub fn compile(schema: &Schema, opts: &CompileOptions) -> Result<ModelPlan> {
    if schema.fields.is_empty() {
        return Err(Error::EmptySchema {
            name: schema.name.clone(),
        });
    }
    if opts.latent_dim == 0 || opts.state_dim == 0 || opts.char_embed_dim == 0 {
        return Err(Error::Config(
            "latent_dim, state_dim and char_embed_dim must be positive".into(),
        ));
    }
    for omitted in &opts.omit_fields {
        if !schema.fields.iter().any(|f| &f.name == omitted) {
            return Err(Error::UnknownField {
                field: omitted.clone(),
            });
        }
    }

    let elements = |omit: &[String]| -> Vec<PlanElement> {
        let mut out: Vec<PlanElement> = schema
            .string_fields()
            .filter(|f| !omit.contains(&f.name))
            .map(|f| PlanElement::StringField {
                name: f.name.clone(),
            })
            .collect();
        let scalars: Vec<String> = schema.scalar_fields().map(|f| f.name.clone()).collect();
        if !scalars.is_empty() {
            out.push(PlanElement::ScalarGroup { fields: scalars });
        }
        out
    };

    let (root, latent_dim) = match opts.variant {
        Variant::Tuple => (
            PlanRoot::Tuple {
                elements: elements(&[]),
            },
            opts.latent_dim,
        ),
        Variant::PassThrough => (
            PlanRoot::SimpleTuple {
                elements: elements(&opts.omit_fields),
            },
            opts.latent_dim,
        ),
        Variant::TextConcat => (PlanRoot::TextLiteral, opts.latent_dim * 2),
    };

    if root.elements().is_empty() && opts.variant != Variant::TextConcat {
        return Err(Error::EmptySchema {
            name: schema.name.clone(),
        });
    }

    Ok(ModelPlan {
        schema: schema.clone(),
        root,
        variant: opts.variant,
        latent_dim,
        state_dim: opts.state_dim,
        char_embed_dim: opts.char_embed_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_fixture_parses_to_expected_fields() {
        let schema = parse_schema(ADDRESS_SCHEMA).unwrap();
        assert_eq!(schema.name, "Address");
        assert_eq!(schema.fields.len(), 9);
        assert_eq!(schema.scalar_fields().count(), 2);
        assert_eq!(schema.string_fields().count(), 7);
        let tags: Vec<u32> = schema.fields.iter().map(|f| f.tag).collect();
        assert_eq!(tags, (1..=9).collect::<Vec<_>>());
        assert_eq!(schema.fields[0].name, "lat");
        assert_eq!(schema.fields[8].name, "postcode");
        assert_eq!(schema.fields[8].kind, FieldKind::String);
    }

    #[test]
    fn empty_message_parses_but_does_not_compile() {
        let schema = parse_schema("message M {}").unwrap();
        assert!(schema.fields.is_empty());
        let err = compile(&schema, &CompileOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptySchema { .. }));
    }

    #[test]
    fn unsupported_type_is_rejected_with_its_keyword() {
        let err = parse_schema("message M { optional int32 x = 1; }").unwrap_err();
        match err {
            Error::UnsupportedType { keyword, line } => {
                assert_eq!(keyword, "int32");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_tags_and_names_are_rejected() {
        let err =
            parse_schema("message M { optional float a = 1; optional float b = 1; }").unwrap_err();
        assert!(matches!(err, Error::DuplicateTag { tag: 1, .. }));
        let err =
            parse_schema("message M { optional float a = 1; optional string a = 2; }").unwrap_err();
        assert!(matches!(err, Error::DuplicateField { .. }));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_schema("message M {\n  optional float x 1;\n}").unwrap_err();
        match err {
            Error::SchemaParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn comments_are_ignored() {
        let text = "// header\nmessage M { // trailing\n  optional string s = 1; // note\n}";
        let schema = parse_schema(text).unwrap();
        assert_eq!(schema.fields.len(), 1);
    }

    #[test]
    fn print_parse_round_trip() {
        let schema = parse_schema(ADDRESS_SCHEMA).unwrap();
        let printed = print_schema(&schema);
        let reparsed = parse_schema(&printed).unwrap();
        assert_eq!(schema, reparsed);
    }

    #[test]
    fn tuple_compile_groups_scalars_last() {
        let schema = parse_schema(ADDRESS_SCHEMA).unwrap();
        let plan = compile(&schema, &CompileOptions::default()).unwrap();
        let PlanRoot::Tuple { elements } = &plan.root else {
            panic!("expected tuple root");
        };
        assert_eq!(elements.len(), 8);
        assert!(matches!(
            elements.last().unwrap(),
            PlanElement::ScalarGroup { fields } if fields == &["lat", "long"]
        ));
        assert!(matches!(
            &elements[0],
            PlanElement::StringField { name } if name == "number"
        ));
    }

    #[test]
    fn scalars_only_schema_compiles_to_single_scalar_element() {
        let schema =
            parse_schema("message M { optional float a = 1; optional float b = 2; }").unwrap();
        let plan = compile(&schema, &CompileOptions::default()).unwrap();
        let PlanRoot::Tuple { elements } = &plan.root else {
            panic!()
        };
        assert_eq!(elements.len(), 1);
        assert!(matches!(elements[0], PlanElement::ScalarGroup { .. }));
    }

    #[test]
    fn text_concat_doubles_latent_dim() {
        let schema = parse_schema(ADDRESS_SCHEMA).unwrap();
        let opts = CompileOptions {
            variant: Variant::TextConcat,
            ..CompileOptions::default()
        };
        let plan = compile(&schema, &opts).unwrap();
        assert_eq!(plan.latent_dim, 256);
        assert_eq!(plan.root, PlanRoot::TextLiteral);
    }

    #[test]
    fn pass_through_honors_omission_list() {
        let schema = parse_schema(ADDRESS_SCHEMA).unwrap();
        let opts = CompileOptions {
            variant: Variant::PassThrough,
            omit_fields: vec!["unit".into(), "district".into(), "region".into()],
            ..CompileOptions::default()
        };
        let plan = compile(&schema, &opts).unwrap();
        let PlanRoot::SimpleTuple { elements } = &plan.root else {
            panic!()
        };
        // number, street, city, postcode + scalar group
        assert_eq!(elements.len(), 5);
    }

    #[test]
    fn compile_is_deterministic() {
        let schema = parse_schema(ADDRESS_SCHEMA).unwrap();
        let a = compile(&schema, &CompileOptions::default()).unwrap();
        let b = compile(&schema, &CompileOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_positive_dims_are_rejected() {
        let schema = parse_schema("message M { optional string s = 1; }").unwrap();
        let opts = CompileOptions {
            latent_dim: 0,
            ..CompileOptions::default()
        };
        assert!(compile(&schema, &opts).is_err());
    }
}
