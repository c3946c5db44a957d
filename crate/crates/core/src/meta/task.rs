use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, Level};
use crate::meta::model::LossKind;

/// One labeled sample inside a task: an induced or native graph with its
/// binary target (1/0) or regression value.
#[derive(Debug, Clone)]
pub struct TaskSample {
    pub graph: Graph,
    pub target: f64,
}

/// A binary (one-vs-rest) or regression task with disjoint support and
/// query sets. Binary tasks are built 1:1 positive/negative in both sets.
#[derive(Debug, Clone)]
pub struct Task {
    pub level: Level,
    /// Class id this task treats as positive (0 for regression).
    pub positive_class: usize,
    pub loss: LossKind,
    pub support: Vec<TaskSample>,
    pub query: Vec<TaskSample>,
}

/// Support/query sizing for [`build_tasks`].
#[derive(Debug, Clone, Copy)]
pub struct TaskBuildConfig {
    /// Support samples per polarity (the k of k-shot).
    pub shots: usize,
    /// Cap on query samples per polarity.
    pub query_cap: usize,
    pub seed: u64,
}

impl Default for TaskBuildConfig {
    fn default() -> Self {
        TaskBuildConfig {
            shots: 20,
            query_cap: 50,
            seed: 0,
        }
    }
}

/// One one-vs-rest binary task per class of the dataset, with negatives
/// drawn uniformly from the other classes at a 1:1 ratio, split into
/// k-shot support and capped query. A regression dataset yields a single
/// mse task over all items instead.
pub fn build_tasks(ds: &Dataset, cfg: &TaskBuildConfig) -> Result<Vec<Task>> {
    if cfg.shots == 0 {
        return Err(Error::invalid("build_tasks: shots must be >= 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    if ds.is_regression() {
        let mut ids: Vec<usize> = (0..ds.items.len()).collect();
        for (i, item) in ds.items.iter().enumerate() {
            if item.target.is_none() {
                return Err(Error::invalid(format!("item {i} has no regression target")));
            }
        }
        if ids.len() < 2 {
            return Err(Error::invalid("build_tasks: regression needs >= 2 samples"));
        }
        ids.shuffle(&mut rng);
        let s = cfg.shots.min(ids.len() - 1);
        let target_of = |i: usize| ds.items[i].target.as_ref().unwrap()[0];
        let sample_of = |i: usize| TaskSample {
            graph: ds.items[i].graph.clone(),
            target: target_of(i),
        };
        let support = ids[..s].iter().map(|&i| sample_of(i)).collect();
        let query = ids[s..]
            .iter()
            .take(cfg.query_cap)
            .map(|&i| sample_of(i))
            .collect();
        return Ok(vec![Task {
            level: ds.level,
            positive_class: 0,
            loss: LossKind::Mse,
            support,
            query,
        }]);
    }

    let mut tasks = Vec::with_capacity(ds.num_classes());
    for class in 0..ds.num_classes() {
        let mut pos = ds.class_members(class);
        if pos.len() < 2 {
            return Err(Error::invalid(format!(
                "build_tasks: class '{}' has {} samples, need >= 2",
                ds.classes[class],
                pos.len()
            )));
        }
        let mut neg: Vec<usize> = (0..ds.items.len())
            .filter(|i| ds.items[*i].class.is_some() && ds.items[*i].class != Some(class))
            .collect();
        if neg.len() < 2 {
            return Err(Error::invalid(format!(
                "build_tasks: class '{}' has too few negatives",
                ds.classes[class]
            )));
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let m = pos.len().min(neg.len());
        pos.truncate(m);
        neg.truncate(m);
        let s = cfg.shots.min(m - 1).max(1);
        let q = (m - s).min(cfg.query_cap);

        let make = |ids: &[usize], target: f64| -> Vec<TaskSample> {
            ids.iter()
                .map(|&i| TaskSample {
                    graph: ds.items[i].graph.clone(),
                    target,
                })
                .collect()
        };
        let mut support = make(&pos[..s], 1.0);
        support.extend(make(&neg[..s], 0.0));
        let mut query = make(&pos[s..s + q], 1.0);
        query.extend(make(&neg[s..s + q], 0.0));
        debug_assert!(pos[..s].iter().all(|i| !pos[s..s + q].contains(i)));

        tasks.push(Task {
            level: ds.level,
            positive_class: class,
            loss: LossKind::BinaryCe,
            support,
            query,
        });
    }
    Ok(tasks)
}

/// Seeded 1:1 split of task indices into meta-training and meta-testing
/// pools. With an odd count the extra task goes to meta-training.
pub fn split_tasks(count: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let cut = count - count / 2;
    let mut train = ids[..cut].to_vec();
    let mut test = ids[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// A multi-task episode: indices into a task pool, covering the levels that
/// have tasks available.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub task_ids: Vec<usize>,
}

/// Samples `count` episodes with up to `tasks_per_level` tasks drawn (without
/// replacement inside an episode) from each level's pool.
pub fn build_episodes(
    tasks: &[Task],
    pool: &[usize],
    count: usize,
    tasks_per_level: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    if tasks_per_level == 0 {
        return Err(Error::invalid("build_episodes: tasks_per_level must be >= 1"));
    }
    let mut by_level: std::collections::BTreeMap<&'static str, Vec<usize>> =
        std::collections::BTreeMap::new();
    for &tid in pool {
        let task = tasks
            .get(tid)
            .ok_or_else(|| Error::invalid(format!("pool references unknown task {tid}")))?;
        by_level.entry(task.level.as_str()).or_default().push(tid);
    }
    if by_level.is_empty() {
        return Err(Error::invalid("build_episodes: empty task pool"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut task_ids = Vec::new();
        for ids in by_level.values() {
            let mut candidates = ids.clone();
            candidates.shuffle(&mut rng);
            candidates.truncate(tasks_per_level);
            task_ids.extend(candidates);
        }
        task_ids.sort_unstable();
        episodes.push(Episode { task_ids });
    }
    Ok(episodes)
}
