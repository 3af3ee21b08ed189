/// Byte ids occupy `0..256`.
pub const PAD: u32 = 256;
pub const BOS: u32 = 257;
/// Reserved; never emitted.
pub const EOS: u32 = 258;
pub const VOCAB_SIZE: usize = 259;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedExample {
    pub ids: Vec<u32>,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `BOS` followed by the UTF-8 bytes of `text`, truncated to `max_seq_len`.
pub fn tokenize(text: &str, max_seq_len: usize) -> TokenizedExample {
    let ids = std::iter::once(BOS)
        .chain(text.bytes().map(u32::from))
        .take(max_seq_len.max(1))
        .collect();
    TokenizedExample { ids }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(tokenize("Ab", 16).ids, vec![257, 65, 98]);
        assert_eq!(tokenize("x", 2).ids, vec![257, 120]);
        assert_eq!(tokenize("xyz", 2).ids, vec![257, 120]);
        assert_eq!(tokenize("é", 16).ids, vec![257, 0xC3, 0xA9]);
    }

    #[test]
    fn ids_stay_in_vocab() {
        let t = tokenize("héllo wörld ✓ 🦀", 64);
        assert_eq!(t.ids[0], BOS);
        assert!(t.ids.iter().all(|&id| (id as usize) < VOCAB_SIZE && id != PAD));
    }
}
