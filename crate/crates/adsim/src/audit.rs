use std::fmt::Write as _;

use adsim_core::model::{builtin_policies, builtin_policy, CountingRule, PlatformPolicy, ThresholdRule, MILE_M};

use crate::error::{Error, Result};

fn kebab<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Human-readable defense summary for one policy.
pub fn describe_policy(p: &PlatformPolicy) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "policy: {}", p.name);
    let _ = writeln!(out, "audience-validity-threshold: {}", p.audience_validity_threshold);
    let _ = writeln!(out, "dashboard-threshold: {}", p.dashboard_threshold);
    let _ = writeln!(out, "delivery-threshold: {}", p.delivery_threshold);
    let _ = writeln!(out, "threshold-rule: {}", kebab(&p.threshold_rule));
    let _ = writeln!(out, "counting-rule: {}", kebab(&p.counting_rule));
    let eps = p.insights_epsilon.map(|e| e.to_string()).unwrap_or_else(|| "none (exact counts)".into());
    let _ = writeln!(out, "insights-epsilon: {eps}");
    let _ = writeln!(out, "transparency: {}", kebab(&p.transparency));
    let _ = writeln!(out, "min-circle-radius: {:.2} mi", p.min_circle_radius_m / MILE_M);
    let _ = writeln!(out, "respect-opt-out: {}", p.respect_opt_out);
    let rule = match p.threshold_rule {
        ThresholdRule::AtLeast => "threshold - 1",
        ThresholdRule::Above => "threshold",
    };
    let _ = writeln!(out, "complicit-needed: {} ({rule})", p.complicit_needed());
    if p.counting_rule == CountingRule::CountOnlyDeliverable {
        let _ = writeln!(
            out,
            "note: adblock, inactive and spam accounts do not count toward the threshold, so padding with them does not work"
        );
    }
    out
}

/// Looks up a preset and describes it.
pub fn audit_policy(name: &str) -> Result<String> {
    let policy = builtin_policy(name).ok_or_else(|| Error::UnknownPolicy {
        name: name.to_string(),
        known: builtin_policies().into_iter().map(|p| p.name).collect::<Vec<_>>().join(", "),
    })?;
    Ok(describe_policy(&policy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complicit_counts_per_preset() {
        for (name, n) in [("facebook-2018", 19), ("linkedin", 299), ("twitter", 499), ("google", 999)] {
            let text = audit_policy(name).unwrap();
            assert!(text.contains(&format!("complicit-needed: {n} ")), "{text}");
        }
    }

    #[test]
    fn twitter_mentions_uncounted_accounts() {
        assert!(audit_policy("twitter").unwrap().contains("do not count"));
        assert!(!audit_policy("google").unwrap().contains("do not count"));
    }

    #[test]
    fn unknown_policy_exits_two() {
        let err = audit_policy("myspace").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("myspace"));
    }

    #[test]
    fn fields_render_in_kebab_case() {
        let text = audit_policy("twitter").unwrap();
        assert!(text.contains("counting-rule: count-only-deliverable"));
        assert!(text.contains("threshold-rule: at-least"));
        assert!(text.contains("transparency: partial"));
        assert!(text.contains("min-circle-radius: 1.00 mi"));
    }
}
