/// Splits a method name into lowercase subtokens.
///
/// Boundaries are underscores (and any other non-alphanumeric character),
/// lower-to-upper case transitions and letter/digit transitions.
pub fn subtokenize_name(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<char> = None;
    for ch in name.chars() {
        if !ch.is_alphanumeric() {
            flush(&mut cur, &mut out);
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            let case_break = p.is_lowercase() && ch.is_uppercase();
            let digit_break = p.is_ascii_digit() != ch.is_ascii_digit();
            if case_break || digit_break {
                flush(&mut cur, &mut out);
            }
        }
        cur.extend(ch.to_lowercase());
        prev = Some(ch);
    }
    flush(&mut cur, &mut out);
    out
}

fn flush(cur: &mut String, out: &mut Vec<String>) {
    if !cur.is_empty() {
        out.push(std::mem::take(cur));
    }
}

/// Joins subtokens back into a camelCase identifier.
pub fn join_camel_case(subtokens: &[String]) -> String {
    let mut out = String::new();
    for (i, sub) in subtokens.iter().enumerate() {
        let mut chars = sub.chars();
        match chars.next() {
            Some(first) if i > 0 => {
                out.extend(first.to_uppercase());
                out.push_str(chars.as_str());
            }
            _ => out.push_str(sub),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splitting_rules() {
        assert_eq!(subtokenize_name("getItemCount"), ["get", "item", "count"]);
        assert_eq!(subtokenize_name("snake_case_fn"), ["snake", "case", "fn"]);
        assert_eq!(subtokenize_name("x"), ["x"]);
        assert_eq!(subtokenize_name("__init__"), ["init"]);
        assert_eq!(subtokenize_name("toUTF8String"), ["to", "utf", "8", "string"]);
    }

    #[test]
    fn camel_case_join() {
        let subs = subtokenize_name("get_item_count");
        assert_eq!(join_camel_case(&subs), "getItemCount");
        assert_eq!(join_camel_case(&[]), "");
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_output(name in "[a-zA-Z0-9_]{1,24}") {
            let once = subtokenize_name(&name);
            prop_assert_eq!(subtokenize_name(&once.join("_")), once);
        }
    }
}
