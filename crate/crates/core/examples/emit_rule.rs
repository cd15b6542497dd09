//! Turns a misuse category plus a rule skeleton into a rule file, then
//! checks a snippet with the result.

use camtax::classification::CamCategory;
use camtax::corpus::ProgramUnit;
use camtax::rules::{check, emit_rule, parse_rule, trace_program};

const SKELETON: &str = "\
OBJECTS
  r: RSA_generate_key_ex()
CONSTRAINTS
  r[1] >= 2048
";

fn main() -> camtax::Result<()> {
    let category = CamCategory::base(
        "Insufficient RSA Key Size",
        "RSA moduli below 2048 bits can be factored with modest resources.",
        vec!["keys.c".into()],
    );
    let mut skeleton = parse_rule(SKELETON)?;
    skeleton.name = "rsa_key_size".into();
    let text = emit_rule(&category, &skeleton)?;
    print!("{text}");

    let rule = parse_rule(&text)?;
    let unit = ProgramUnit::new("keys.c", "void k(RSA *r, BIGNUM *e) {\n    RSA_generate_key_ex(r, 1024, e, NULL);\n}\n");
    for v in check(&rule, &trace_program(&unit)) {
        println!("violation in {}: {}", v.program_id, v.evidence);
    }
    Ok(())
}
