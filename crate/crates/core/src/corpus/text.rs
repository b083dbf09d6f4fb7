use unicode_normalization::UnicodeNormalization;

/// Ordered lowercase alphanumeric tokens of one text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    tokens: Vec<String>,
}

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

impl IntoIterator for TokenStream {
    type Item = String;
    type IntoIter = std::vec::IntoIter<String>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.into_iter()
    }
}

/// NFKC normalization followed by lowercasing. Diacritics survive.
pub fn normalize_text(raw: &str) -> String {
    raw.nfkc().collect::<String>().to_lowercase()
}

/// Splits the normalized text on every non-alphanumeric codepoint.
///
/// `"Harry's wand\u{2014}broken!"` becomes `[harry, s, wand, broken]`.
pub fn tokenize(text: &str) -> TokenStream {
    let normalized = normalize_text(text);
    let tokens = normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect();
    TokenStream { tokens }
}
