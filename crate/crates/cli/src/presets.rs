//! Built-in configurations. Full-scale sizes (3000 particles, t = 1e4); `--desk-scale` shrinks them.

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        pub const NAMES: &[&str] = &[$($name),*];

        pub fn get(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../presets/", $name, ".toml"))),)*
                _ => None,
            }
        }
    };
}

presets!(
    "tg-defaults",
    "free-particle",
    "parity-broken",
    "fig1a",
    "fig1b",
    "fig2a",
    "fig2b",
    "fig-sigma-colored",
    "fig-sigma-white",
    "fig-alpha-lambda",
    "fig-delta",
);
