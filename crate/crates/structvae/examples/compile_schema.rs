//! Parse a record schema and compile it into a model plan.
//!
//! ```bash
//! cargo run --release --example compile_schema
//! ```

use structvae::schema::{
    compile, parse_schema, print_schema, CompileOptions, PlanElement, PlanRoot, Variant,
    ADDRESS_SCHEMA,
};

fn main() -> structvae::Result<()> {
    let schema = parse_schema(ADDRESS_SCHEMA)?;
    println!("message {} with {} fields", schema.name, schema.fields.len());
    println!("canonical form:\n{}", print_schema(&schema));

    for variant in [Variant::Tuple, Variant::PassThrough, Variant::TextConcat] {
        let opts = CompileOptions {
            variant,
            // the pass-through baseline drops the fields that the corpus
            // never populates
            omit_fields: if variant == Variant::PassThrough {
                vec!["unit".into(), "district".into(), "region".into()]
            } else {
                vec![]
            },
            ..CompileOptions::default()
        };
        let plan = compile(&schema, &opts)?;
        println!(
            "variant {variant}: latent {}, state {}, arity {}",
            plan.latent_dim,
            plan.state_dim,
            plan.arity()
        );
        match &plan.root {
            PlanRoot::Tuple { elements } | PlanRoot::SimpleTuple { elements } => {
                for (i, el) in elements.iter().enumerate() {
                    match el {
                        PlanElement::StringField { name } => println!("  [{i}] string  {name}"),
                        PlanElement::ScalarGroup { fields } => {
                            println!("  [{i}] scalars {}", fields.join(", "))
                        }
                    }
                }
            }
            PlanRoot::TextLiteral => println!("  [0] text literal over the serialized record"),
        }
    }

    // errors are loud: unsupported types name the keyword and line
    let err = parse_schema("message M { optional int32 x = 1; }").unwrap_err();
    println!("rejected as expected: {err}");
    Ok(())
}
