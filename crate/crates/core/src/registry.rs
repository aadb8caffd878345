//! Name-keyed registry of strategy factories selected at runtime.

use std::collections::BTreeMap;

/// Maps a name to a factory. Names are unique; registering a name again
/// replaces the earlier entry.
pub struct Registry<F> {
    entries: BTreeMap<String, F>,
}

impl<F> Default for Registry<F> {
    fn default() -> Self {
        Registry {
            entries: BTreeMap::new(),
        }
    }
}

impl<F> Registry<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, factory: F) -> &mut Self {
        self.entries.insert(name.to_string(), factory);
        self
    }

    pub fn get(&self, name: &str) -> Option<&F> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &F)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct En;
    struct Fr;
    impl Greeter for En {
        fn greet(&self) -> String {
            "hello".into()
        }
    }
    impl Greeter for Fr {
        fn greet(&self) -> String {
            "bonjour".into()
        }
    }

    type Factory = fn() -> Box<dyn Greeter>;

    #[test]
    fn selects_by_name() {
        let mut r: Registry<Factory> = Registry::new();
        r.register("en", || Box::new(En))
            .register("fr", || Box::new(Fr));
        assert_eq!(r.get("fr").unwrap()().greet(), "bonjour");
        assert!(r.get("de").is_none());
        assert_eq!(r.names().collect::<Vec<_>>(), ["en", "fr"]);
    }

    #[test]
    fn re_registering_replaces() {
        let mut r: Registry<Factory> = Registry::new();
        r.register("x", || Box::new(En))
            .register("x", || Box::new(Fr));
        assert_eq!(r.get("x").unwrap()().greet(), "bonjour");
        assert_eq!(r.names().count(), 1);
    }
}
