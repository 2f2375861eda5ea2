//! Versioned prompt templates with `{{key}}` placeholders.

pub const TEMPLATE_VERSION: u32 = 1;

pub const PHASE_A: &str = include_str!("../prompts/phase_a.txt");
pub const PHASE_B: &str = include_str!("../prompts/phase_b.txt");
pub const PHASE_C: &str = include_str!("../prompts/phase_c.txt");
pub const PHASE_D: &str = include_str!("../prompts/phase_d.txt");
pub const PHASE_E: &str = include_str!("../prompts/phase_e.txt");
pub const ID_TRIAGE: &str = include_str!("../prompts/id_triage.txt");
pub const ID_SPEC: &str = include_str!("../prompts/id_spec.txt");
pub const ID_VERIFY: &str = include_str!("../prompts/id_verify.txt");
pub const ID_STANDALONE: &str = include_str!("../prompts/id_standalone.txt");
pub const SVE_L2: &str = include_str!("../prompts/sve_l2.txt");
pub const BLIND_SPOT: &str = include_str!("../prompts/blind_spot.txt");
pub const GAP_REAUDIT: &str = include_str!("../prompts/gap_reaudit.txt");

/// Substitute `{{key}}` placeholders in one pass. Substituted text is not
/// rescanned; unknown placeholders stay verbatim.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(key);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
