pub const DEFAULT_MIN_COMPONENT: usize = 3;

/// A package counts as obfuscated when none of its dot-separated components
/// reaches `min_component` characters.
pub fn is_obfuscated_with(package: &str, min_component: usize) -> bool {
    !package.split('.').any(|c| c.chars().count() >= min_component)
}

pub fn is_obfuscated(package: &str) -> bool {
    is_obfuscated_with(package, DEFAULT_MIN_COMPONENT)
}
