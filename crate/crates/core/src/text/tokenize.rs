use std::sync::LazyLock;

use regex::Regex;

pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
pub const NUM_TOKEN: &str = "<num>";

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
          (?P<ph><url>|<user>|<num>)
        | (?P<url>https?://\S+|www\.\S+)
        | (?P<user>@[\p{L}\p{N}_]+)
        | \#(?P<tag>[\p{L}\p{N}_]+)
        | (?P<num>\p{N}+(?:[.,:]\p{N}+)*)
        | (?P<word>[\p{L}\p{M}]+(?:['’][\p{L}\p{M}]+)*)
        | (?P<punct>\S)
        ",
    )
    .expect("token regex")
});

/// Lowercases and splits a tweet.
///
/// URLs become `<url>`, mentions `<user>`, numbers `<num>`; hashtags lose the
/// `#`; every other non-space, non-word character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    push_tokens(&lower, &mut out);
    out
}

fn push_tokens(text: &str, out: &mut Vec<String>) {
    for cap in TOKEN_RE.captures_iter(text) {
        if let Some(m) = cap.name("ph") {
            out.push(m.as_str().to_string());
        } else if cap.name("url").is_some() {
            out.push(URL_TOKEN.to_string());
        } else if cap.name("user").is_some() {
            out.push(USER_TOKEN.to_string());
        } else if let Some(tag) = cap.name("tag") {
            push_tokens(tag.as_str(), out);
        } else if cap.name("num").is_some() {
            out.push(NUM_TOKEN.to_string());
        } else if let Some(m) = cap.name("word").or_else(|| cap.name("punct")) {
            out.push(m.as_str().to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(tokenize("Hostages KILLED!"), ["hostages", "killed", "!"]);
    }

    #[test]
    fn replaces_urls_and_mentions() {
        assert_eq!(tokenize("see http://t.co/x @bob"), ["see", "<url>", "<user>"]);
        assert_eq!(tokenize("www.bbc.co.uk/news"), ["<url>"]);
    }

    #[test]
    fn numbers_and_hashtags() {
        assert_eq!(
            tokenize("#CharlieHebdo 12 dead, 3.5k #MH17"),
            ["charliehebdo", "<num>", "dead", ",", "<num>", "k", "mh", "<num>"]
        );
        assert_eq!(tokenize("don't panic"), ["don't", "panic"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n").is_empty());
    }

    #[test]
    fn idempotent_on_tweet_sample() {
        let sample = [
            "BREAKING: Gunman takes hostages in Sydney cafe #sydneysiege http://t.co/abc",
            "@user1 @user2 this is NOT confirmed yet...",
            "Charlie Hebdo: 12 killed in Paris attack, 2 suspects at large",
            "Is it true?? #Ferguson",
            "RT @news: Germanwings A320 crashed in French Alps; 150 on board",
            "Ottawa shooting <url> soldier shot at war memorial",
            "«quoted» text — with dashes & ampersands",
            "rock'n'roll isn't dead 4ever",
        ];
        for i in 0..100 {
            let s = format!("{} {}", sample[i % sample.len()], i);
            let once = tokenize(&s);
            assert_eq!(tokenize(&once.join(" ")), once, "{s}");
        }
    }

    proptest! {
        #[test]
        fn idempotent_on_arbitrary_text(s in "\\PC{0,60}") {
            let once = tokenize(&s);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }
    }
}
