//! Name-keyed registries used to select strategies at runtime.
//!
//! Losses, kernels, solvers and recommendation methods are all looked up
//! by a short token (`"bent-hinge"`, `"poly"`, `"dual-cd"`, `"one-step"`).
//! A registry maps each token to a factory that builds the trait object.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Box<dyn Fn(Option<&str>) -> Result<Box<T>> + Send + Sync>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers a factory under `name`. A later registration replaces an
    /// earlier one with the same name.
    pub fn register<F>(&mut self, name: &'static str, factory: F) -> &mut Self
    where
        F: Fn(Option<&str>) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(name, Box::new(factory));
        self
    }

    /// Builds the entry named by `token`. Tokens have the form `name` or
    /// `name:argument`; the argument is handed to the factory verbatim.
    pub fn build(&self, token: &str) -> Result<Box<T>> {
        let (name, arg) = match token.split_once(':') {
            Some((name, arg)) => (name, Some(arg)),
            None => (token, None),
        };
        let factory = self.entries.get(name).ok_or_else(|| {
            Error::invalid_argument(format!(
                "unknown {} '{}' (known: {})",
                self.kind,
                name,
                self.names().join(", ")
            ))
        })?;
        factory(arg)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape {
        fn sides(&self) -> usize;
    }

    struct Polygon(usize);

    impl Shape for Polygon {
        fn sides(&self) -> usize {
            self.0
        }
    }

    #[test]
    fn builds_by_name_and_argument() {
        let mut reg: Registry<dyn Shape> = Registry::new("shape");
        reg.register("triangle", |_| Ok(Box::new(Polygon(3))));
        reg.register("ngon", |arg| {
            let n = arg
                .ok_or_else(|| Error::invalid_argument("ngon needs a side count"))?
                .parse()
                .map_err(|_| Error::invalid_argument("bad side count"))?;
            Ok(Box::new(Polygon(n)))
        });
        assert_eq!(reg.build("triangle").unwrap().sides(), 3);
        assert_eq!(reg.build("ngon:7").unwrap().sides(), 7);
        assert!(reg.build("ngon").is_err());
        let err = reg.build("circle").err().unwrap().to_string();
        assert!(err.contains("ngon, triangle"), "{err}");
    }
}
