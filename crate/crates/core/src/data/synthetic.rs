//! A small generated corpus that needs no external data. Hate-pattern texts
//! carry at least one word from `HATE_POOL`; neutral texts carry words from
//! `NEUTRAL_POOL` only, so keyword presence separates the classes.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{Dataset, Example, Label};
use crate::error::{Error, Result};
use crate::rng;

pub const HATE_POOL: [&str; 8] = [
    "vermin", "scum", "subhuman", "filth", "trash", "rubbish", "blight", "brutish",
];

pub const NEUTRAL_POOL: [&str; 8] = [
    "lovely", "friendly", "kind", "gentle", "cheerful", "wonderful", "helpful", "polite",
];

const SUBJECTS: [&str; 6] = ["they", "those people", "neighbours", "my coworkers", "tourists", "fans"];

const TEMPLATES: [&str; 4] = ["{s} are {w}", "{s} are {w} and {v}", "honestly {s} are {w}", "{w} {s}"];

/// `n / 2` examples per class, shuffled. `n` must be even and at least 16.
pub fn make_synthetic(n: usize, seed: u64) -> Result<Dataset> {
    if n < 16 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "synthetic size must be even and at least 16, got {n}"
        )));
    }
    let mut rng = rng::stream(seed, "synthetic");
    let mut examples = Vec::with_capacity(n);
    for label in [Label::Hate, Label::NotHate] {
        let pool: &[&str] = match label {
            Label::Hate => &HATE_POOL,
            Label::NotHate => &NEUTRAL_POOL,
        };
        for _ in 0..n / 2 {
            let template = TEMPLATES.choose(&mut rng).expect("non-empty");
            let subject = SUBJECTS.choose(&mut rng).expect("non-empty");
            let w = pool[rng.random_range(0..pool.len())];
            let v = pool[rng.random_range(0..pool.len())];
            let text = template
                .replace("{s}", subject)
                .replace("{w}", w)
                .replace("{v}", v);
            examples.push(Example { text, label });
        }
    }
    examples.shuffle(&mut rng);
    Dataset::new(format!("synthetic-{n}"), examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::serialize_csv;

    fn words(text: &str) -> impl Iterator<Item = &str> {
        text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty())
    }

    #[test]
    fn balanced() {
        let s = make_synthetic(512, 0).unwrap().stats();
        assert_eq!((s.hate, s.nothate), (256, 256));
    }

    #[test]
    fn keyword_invariant() {
        for ex in make_synthetic(512, 11).unwrap().examples() {
            let hate = words(&ex.text).filter(|w| HATE_POOL.contains(w)).count();
            let neutral = words(&ex.text).filter(|w| NEUTRAL_POOL.contains(w)).count();
            match ex.label {
                Label::Hate => assert!(hate >= 1 && neutral == 0, "{}", ex.text),
                Label::NotHate => assert!(hate == 0 && neutral >= 1, "{}", ex.text),
            }
        }
    }

    #[test]
    fn pools_disjoint_from_each_other_and_subjects() {
        for w in HATE_POOL {
            assert!(!NEUTRAL_POOL.contains(&w));
            assert!(SUBJECTS.iter().all(|s| !words(s).any(|x| x == w)));
        }
        for w in NEUTRAL_POOL {
            assert!(SUBJECTS.iter().all(|s| !words(s).any(|x| x == w)));
        }
    }

    #[test]
    fn reproducible() {
        let a = serialize_csv(&make_synthetic(64, 5).unwrap());
        let b = serialize_csv(&make_synthetic(64, 5).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, serialize_csv(&make_synthetic(64, 6).unwrap()));
    }

    #[test]
    fn size_checks() {
        assert!(make_synthetic(15, 0).is_err());
        assert!(make_synthetic(17, 0).is_err());
        assert!(make_synthetic(14, 0).is_err());
        assert_eq!(make_synthetic(16, 0).unwrap().len(), 16);
    }
}
