//! Bundled configurations selectable with `--preset`.

pub const TEACHER_STUDENT: &str = include_str!("../presets/teacher-student.conf");
pub const EXACT_CHECK_20: &str = include_str!("../presets/exact-check-20.conf");
pub const SBN200_MNIST: &str = include_str!("../presets/sbn200-mnist.conf");

pub const NAMES: [&str; 3] = ["teacher-student", "exact-check-20", "sbn200-mnist"];

pub fn get(name: &str) -> Option<&'static str> {
    match name {
        "teacher-student" => Some(TEACHER_STUDENT),
        "exact-check-20" => Some(EXACT_CHECK_20),
        "sbn200-mnist" => Some(SBN200_MNIST),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn presets_parse_and_validate() {
        for name in NAMES {
            let cfg = ExperimentConfig::from_text(get(name).unwrap()).unwrap();
            cfg.validate().unwrap();
        }
    }
}
