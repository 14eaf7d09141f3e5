//! Summing per-example gradients over a mini-batch.
//!
//! With the `parallel` feature the examples are processed on the rayon pool;
//! results are always reduced in input order, so the sum is bit-identical to
//! the sequential path regardless of thread count.

use prosody_nn::{Gradients, Graph, NodeId, ParameterStore};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

/// Loss value and gradients of one example.
pub fn example_gradients<I, F>(store: &ParameterStore<f32>, item: &I, loss: &F) -> Result<(f64, Gradients<f32>)>
where
    F: Fn(&mut Graph<'_, f32>, &I) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let node = loss(&mut g, item)?;
    let value = g.value(node).data()[0] as f64;
    Ok((value, g.backward(node)?))
}

fn reduce(store: &ParameterStore<f32>, parts: Vec<Result<(f64, Gradients<f32>)>>) -> Result<(f64, Gradients<f32>)> {
    let mut total = 0.0;
    let mut grads = Gradients::empty(store.len());
    for part in parts {
        let (v, g) = part?;
        total += v;
        grads.add(&g);
    }
    Ok((total, grads))
}

pub fn batch_gradients_sequential<I, F>(store: &ParameterStore<f32>, items: &[I], loss: F) -> Result<(f64, Gradients<f32>)>
where
    F: Fn(&mut Graph<'_, f32>, &I) -> Result<NodeId>,
{
    let parts = items.iter().map(|it| example_gradients(store, it, &loss)).collect();
    reduce(store, parts)
}

#[cfg(feature = "parallel")]
pub fn batch_gradients<I, F>(store: &ParameterStore<f32>, items: &[I], loss: F) -> Result<(f64, Gradients<f32>)>
where
    I: Sync,
    F: Fn(&mut Graph<'_, f32>, &I) -> Result<NodeId> + Sync,
{
    let parts = items.par_iter().map(|it| example_gradients(store, it, &loss)).collect();
    reduce(store, parts)
}

#[cfg(not(feature = "parallel"))]
pub fn batch_gradients<I, F>(store: &ParameterStore<f32>, items: &[I], loss: F) -> Result<(f64, Gradients<f32>)>
where
    I: Sync,
    F: Fn(&mut Graph<'_, f32>, &I) -> Result<NodeId> + Sync,
{
    batch_gradients_sequential(store, items, loss)
}

/// Applies `f` to every item, in parallel when enabled, preserving order.
#[cfg(feature = "parallel")]
pub fn map_items<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    items.par_iter().map(&f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_items<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    items.iter().map(f).collect()
}
