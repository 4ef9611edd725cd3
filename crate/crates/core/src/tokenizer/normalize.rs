use serde::{Deserialize, Serialize};

/// Text normalization applied before tokenization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    /// Folds common Arabic orthographic variants: alef forms to bare alef,
    /// alef maqsura to ya, ta marbuta to ha, and drops tatweel and harakat.
    Arabic,
}

impl Normalization {
    pub fn apply(self, text: &str) -> String {
        match self {
            Normalization::None => text.to_string(),
            Normalization::Arabic => text.chars().filter_map(fold_arabic).collect(),
        }
    }
}

fn fold_arabic(c: char) -> Option<char> {
    match c {
        'أ' | 'إ' | 'آ' | 'ٱ' => Some('ا'),
        'ى' => Some('ي'),
        'ة' => Some('ه'),
        // tatweel
        '\u{0640}' => None,
        // fathatan .. sukun, superscript alef
        '\u{064B}'..='\u{0652}' | '\u{0670}' => None,
        other => Some(other),
    }
}
