/// Lowercased whitespace tokens. Shared by phrase pooling and Jaccard.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}
