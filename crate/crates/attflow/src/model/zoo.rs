use crate::error::{Error, Result};
use crate::model::{ExtractorKind, ModelSpec};

pub(crate) fn decorate(family: &str, spec: &ModelSpec) -> String {
    let mut name = String::new();
    if spec.use_attention {
        name.push_str("Att");
    }
    if spec.use_midway {
        name.push_str("Mid");
    }
    name.push_str(family);
    name
}

/// Every named configuration (the plain baseline plus the four families,
/// each with attention, midway, and combined variants).
pub fn all_zoo_names() -> Vec<String> {
    let mut names = vec!["FlowNetS".to_string()];
    for family in ["FlowNetRes", "FlowNetInc", "FlowNeXt32", "FlowNeXt64"] {
        for prefix in ["", "Att", "Mid", "AttMid"] {
            names.push(format!("{prefix}{family}"));
        }
    }
    names
}

/// The 13-entry benchmark set: the baseline, all four base extractors, all
/// four attention variants, and the midway/combined pair of both grouped
/// families.
pub fn minimum_zoo_names() -> Vec<&'static str> {
    vec![
        "FlowNetS",
        "FlowNetRes",
        "FlowNetInc",
        "FlowNeXt32",
        "FlowNeXt64",
        "AttFlowNetRes",
        "AttFlowNetInc",
        "AttFlowNeXt32",
        "AttFlowNeXt64",
        "MidFlowNeXt32",
        "MidFlowNeXt64",
        "AttMidFlowNeXt32",
        "AttMidFlowNeXt64",
    ]
}

/// Parses a zoo name (case-insensitive) into a spec with the given channel
/// divisor.
pub fn spec_by_name(name: &str, channel_divisor: usize) -> Result<ModelSpec> {
    let lower = name.to_ascii_lowercase();
    let mut rest = lower.as_str();
    let use_attention = rest.starts_with("att");
    if use_attention {
        rest = &rest[3..];
    }
    let use_midway = rest.starts_with("mid");
    if use_midway {
        rest = &rest[3..];
    }
    let extractor = match rest {
        "flownets" => ExtractorKind::Plain,
        "flownetres" => ExtractorKind::Res,
        "flownetinc" => ExtractorKind::Inc,
        "flownext32" => ExtractorKind::NeXt32,
        "flownext64" => ExtractorKind::NeXt64,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown architecture {name:?}; known: {}",
                all_zoo_names().join(", ")
            )))
        }
    };
    if extractor == ExtractorKind::Plain && (use_attention || use_midway) {
        return Err(Error::InvalidArgument(format!(
            "{name:?}: attention/midway variants exist for the block families, not the plain baseline"
        )));
    }
    Ok(ModelSpec::new(extractor, use_attention, use_midway).with_divisor(channel_divisor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoo_has_seventeen_names_thirteen_minimum() {
        assert_eq!(all_zoo_names().len(), 17);
        assert_eq!(minimum_zoo_names().len(), 13);
    }

    #[test]
    fn names_round_trip() {
        for name in all_zoo_names() {
            let spec = spec_by_name(&name, 1).unwrap();
            assert_eq!(spec.name(), name);
        }
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(spec_by_name("FlowNetZ", 1).is_err());
        assert!(spec_by_name("AttFlowNetS", 1).is_err());
    }
}
