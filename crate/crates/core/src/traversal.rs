//! Task-tree execution shared by the exchange drivers: depth-first
//! sequential traversal, or a breadth-first split followed by a rayon
//! fold/reduce over the frontier with privatized accumulators.

/// Frontier size per worker thread before the parallel split stops.
#[cfg(feature = "parallel")]
const TASKS_PER_THREAD: usize = 64;

pub(crate) trait Accumulator: Send + Sized {
    #[cfg_attr(not(feature = "parallel"), allow(dead_code))]
    fn merge(self, other: Self) -> Self;
}

pub(crate) fn dfs<T, A, V>(task: T, acc: &mut A, visit: &V)
where
    V: Fn(&T, &mut A) -> Vec<T>,
{
    for child in visit(&task, acc) {
        dfs(child, acc, visit);
    }
}

/// Runs the task tree rooted at `root`. With `parallel` false (or without
/// the `parallel` feature) this is a plain depth-first traversal whose
/// floating-point results are reproducible run to run.
pub(crate) fn execute<T, A, V, N>(root: T, parallel: bool, new_acc: N, visit: V) -> A
where
    T: Send + Sync,
    A: Accumulator,
    V: Fn(&T, &mut A) -> Vec<T> + Sync,
    N: Fn() -> A + Sync,
{
    let mut acc = new_acc();
    if !parallel {
        dfs(root, &mut acc, &visit);
        return acc;
    }
    parallel_execute(root, acc, new_acc, visit)
}

#[cfg(feature = "parallel")]
fn parallel_execute<T, A, V, N>(root: T, mut acc: A, new_acc: N, visit: V) -> A
where
    T: Send + Sync,
    A: Accumulator,
    V: Fn(&T, &mut A) -> Vec<T> + Sync,
    N: Fn() -> A + Sync,
{
    use rayon::prelude::*;
    let target = rayon::current_num_threads() * TASKS_PER_THREAD;
    let mut frontier = vec![root];
    while !frontier.is_empty() && frontier.len() < target {
        let mut next = Vec::new();
        for t in &frontier {
            next.extend(visit(t, &mut acc));
        }
        frontier = next;
    }
    let rest = frontier
        .into_par_iter()
        .fold(&new_acc, |mut a, t| {
            dfs(t, &mut a, &visit);
            a
        })
        .reduce(&new_acc, A::merge);
    acc.merge(rest)
}

#[cfg(not(feature = "parallel"))]
fn parallel_execute<T, A, V, N>(root: T, mut acc: A, _new_acc: N, visit: V) -> A
where
    T: Send + Sync,
    A: Accumulator,
    V: Fn(&T, &mut A) -> Vec<T> + Sync,
    N: Fn() -> A + Sync,
{
    dfs(root, &mut acc, &visit);
    acc
}

/// Whether parallel execution is compiled in.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
