//! Name-keyed registries for interchangeable strategies.
//!
//! Each strategy family (utility families, voltage models, central
//! solvers) exposes a trait; concrete implementations are registered
//! under a stable name and looked up at runtime from config or CLI flags.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A registry of named factories producing `Arc<T>` trait objects.
pub struct Registry<T: ?Sized, A = ()> {
    kind: &'static str,
    factories: BTreeMap<&'static str, Factory<T, A>>,
}

type Factory<T, A> = Box<dyn Fn(&A) -> Result<Arc<T>> + Send + Sync>;

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &'static str, factory: F)
    where
        F: Fn(&A) -> Result<Arc<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name, Box::new(factory));
    }

    pub fn build(&self, name: &str, args: &A) -> Result<Arc<T>> {
        match self.factories.get(name) {
            Some(factory) => factory(args),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

impl<T: ?Sized, A> fmt::Debug for Registry<T, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> String;
    }

    struct Hello(String);

    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn builds_registered_and_rejects_unknown() {
        let mut reg: Registry<dyn Greeter, String> = Registry::new("greeter");
        reg.register("hello", |who: &String| Ok(Arc::new(Hello(who.clone()))));
        assert_eq!(
            reg.build("hello", &"grid".into()).unwrap().greet(),
            "hello grid"
        );
        assert_eq!(reg.names(), vec!["hello"]);
        let err = reg.build("bye", &String::new()).err().unwrap();
        assert!(err.to_string().contains("registered: hello"));
    }
}
