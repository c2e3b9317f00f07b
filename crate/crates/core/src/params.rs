//! Named parameter tensors and their declaration/initialization.

use rand::SeedableRng;
use tgfuse_autodiff::init::{kaiming_uniform, uniform, InitRng};
use tgfuse_autodiff::{Graph, Scalar, Tensor, Var};

use crate::error::{FuseError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Kaiming { fan_in: usize },
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter declarations in order; layers keep the returned index.
#[derive(Debug, Default)]
pub struct Layout {
    specs: Vec<ParamSpec>,
    prefix: Vec<String>,
}

impl Layout {
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> usize {
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.specs.push(ParamSpec {
            name: full,
            shape: shape.to_vec(),
            init,
        });
        self.specs.len() - 1
    }

    /// Runs `f` with `name` pushed onto the naming prefix.
    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Layout) -> R) -> R {
        self.prefix.push(name.to_string());
        let r = f(self);
        self.prefix.pop();
        r
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }
}

/// Parameter values in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Draws every tensor from one seeded stream, in declaration order.
    pub fn init(specs: Vec<ParamSpec>, seed: u64) -> Self {
        let mut rng = InitRng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                Init::Kaiming { fan_in } => kaiming_uniform(&s.shape, fan_in, &mut rng),
                Init::Uniform(b) => uniform(&s.shape, b, &mut rng),
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::ones(&s.shape),
            })
            .collect();
        ParamStore { specs, tensors }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Replaces all values at once after checking names and shapes, so a
    /// rejected load leaves the store untouched.
    pub fn replace(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.specs.len() {
            return Err(FuseError::input(format!(
                "expected {} tensors, got {}",
                self.specs.len(),
                named.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(&named) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(FuseError::input(format!(
                    "tensor {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        self.tensors = named.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }

    /// Puts every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Vec<ParamSpec> {
        let mut l = Layout::default();
        l.scope("a", |l| {
            l.add("w", &[4, 3], Init::Kaiming { fan_in: 3 });
            l.add("b", &[3], Init::Zeros);
        });
        l.add("g", &[3], Init::Ones);
        l.into_specs()
    }

    #[test]
    fn names_are_scoped() {
        let names: Vec<_> = layout().into_iter().map(|s| s.name).collect();
        assert_eq!(names, ["a.w", "a.b", "g"]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ParamStore::<f64>::init(layout(), 3);
        let b = ParamStore::<f64>::init(layout(), 3);
        let c = ParamStore::<f64>::init(layout(), 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.tensors()[0].max_abs() <= 2f64.sqrt());
        assert_eq!(a.tensors()[1].max_abs(), 0.0);
        assert_eq!(a.get("g").unwrap().data(), &[1.0; 3]);
        assert_eq!(a.numel(), 18);
    }

    #[test]
    fn rejected_replace_leaves_values() {
        let mut a = ParamStore::<f32>::init(layout(), 1);
        let before = a.clone();
        let bad = vec![("a.w".into(), Tensor::zeros(&[3, 4]))];
        assert!(a.replace(bad).is_err());
        assert_eq!(a, before);
    }
}
