//! Hard-negative triplet mining and the retrain / re-retrieve loop for
//! dense-encoder fine-tuning.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Question;
use crate::gateway::{GatewayError, TrainCommand, Trainer};
use crate::ranked::{PassageRef, RankedList};

#[derive(Debug, thiserror::Error)]
pub enum MiningError {
    #[error("question {0} has no gold passages")]
    UnlabeledQuestion(String),
    #[error("schedule field `{0}` must be positive")]
    InvalidSchedule(&'static str),
    #[error("trainer unavailable: {0}")]
    TrainerUnavailable(String),
    #[error("trainer failed in iteration {iteration}: {source}")]
    TrainerFailure {
        iteration: usize,
        #[source]
        source: GatewayError,
    },
    #[error("retrieval failed in iteration {iteration}: {message}")]
    RetrievalFailure { iteration: usize, message: String },
    #[error("triplet sink: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletSample {
    pub question_id: String,
    pub positive_ref: PassageRef,
    pub negative_ref: PassageRef,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningSchedule {
    pub top_k: usize,
    pub batches_per_iter: usize,
    pub iterations: usize,
    pub batch_size: usize,
}

impl Default for MiningSchedule {
    fn default() -> Self {
        Self { top_k: 10, batches_per_iter: 400, iterations: 200, batch_size: 8 }
    }
}

impl MiningSchedule {
    /// Checks positivity; `iterations` may be 0 (an empty run).
    pub fn validate(&self) -> Result<(), MiningError> {
        if self.top_k == 0 {
            return Err(MiningError::InvalidSchedule("top_k"));
        }
        if self.batches_per_iter == 0 {
            return Err(MiningError::InvalidSchedule("batches_per_iter"));
        }
        if self.batch_size == 0 {
            return Err(MiningError::InvalidSchedule("batch_size"));
        }
        Ok(())
    }

    pub fn planned_steps(&self) -> usize {
        self.batches_per_iter * self.iterations
    }
}

/// Non-gold entries of the top `top_k`, nearest the best-ranked gold entry
/// first: those ranked above it (in rank order), then those below. With no
/// gold in the top `top_k`, this is plain rank order.
pub fn distractors(list: &RankedList, gold: &HashSet<PassageRef>, top_k: usize) -> Vec<PassageRef> {
    let top = list.top(top_k);
    let best_gold = top.iter().position(|e| gold.contains(&e.passage_ref()));
    let non_gold = |range: std::ops::Range<usize>| {
        top[range].iter().map(|e| e.passage_ref()).filter(|r| !gold.contains(r)).collect::<Vec<_>>()
    };
    match best_gold {
        Some(g) => {
            let mut out = non_gold(0..g);
            out.extend(non_gold(g + 1..top.len()));
            out
        }
        None => non_gold(0..top.len()),
    }
}

fn mine_one(
    q: &Question,
    list: Option<&RankedList>,
    iteration: usize,
    schedule: &MiningSchedule,
) -> Vec<TripletSample> {
    let Some(list) = list else {
        return Vec::new();
    };
    let gold = q.gold_set();
    let mut positives = Vec::new();
    let mut seen = HashSet::new();
    for r in &q.gold_refs {
        if seen.insert(r) {
            positives.push(r.clone());
        }
    }
    let mut out = Vec::new();
    'outer: for neg in distractors(list, &gold, schedule.top_k) {
        for pos in &positives {
            if out.len() == schedule.batch_size {
                break 'outer;
            }
            out.push(TripletSample {
                question_id: q.question_id.clone(),
                positive_ref: pos.clone(),
                negative_ref: neg.clone(),
                iteration,
            });
        }
    }
    out
}

/// Triplets for every question, in question order, at most `batch_size`
/// per question. Questions without a retrieved list yield nothing.
pub fn mine_triplets(
    questions: &[Question],
    retrieved: &HashMap<String, RankedList>,
    iteration: usize,
    schedule: &MiningSchedule,
) -> Result<Vec<TripletSample>, MiningError> {
    if let Some(q) = questions.iter().find(|q| !q.is_labeled()) {
        return Err(MiningError::UnlabeledQuestion(q.question_id.clone()));
    }
    let per_q: Vec<Vec<TripletSample>> =
        questions.par_iter().map(|q| mine_one(q, retrieved.get(&q.question_id), iteration, schedule)).collect();
    Ok(per_q.into_iter().flatten().collect())
}

/// Dense retrieval whose encoder can be swapped after training.
pub trait MiningRetriever {
    fn retrieve(&mut self, questions: &[Question], k: usize) -> Result<HashMap<String, RankedList>, String>;
    /// Picks up the encoder exported by iteration `iteration`.
    fn reload(&mut self, iteration: usize) -> Result<(), String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub triplets: usize,
    pub questions_with_triplets: usize,
    pub trainer_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub schedule: MiningSchedule,
    pub planned_steps: usize,
    pub dry_run: bool,
    pub iterations: Vec<IterationRecord>,
}

/// Where triplets go and how the trainer is addressed.
pub struct MiningIo<'a> {
    pub trainer: Option<&'a dyn Trainer>,
    pub profile: String,
    /// Receives each iteration's triplets and returns the path the trainer
    /// should read them from.
    pub sink: &'a mut dyn FnMut(usize, &[TripletSample]) -> std::io::Result<String>,
    /// Export location for the encoder trained in a given iteration.
    pub export_path: &'a dyn Fn(usize) -> String,
}

/// Runs `schedule.iterations` rounds of retrieve → mine → emit → train →
/// reload. A dry run stops after emitting and never touches the trainer.
pub fn run_mining_loop(
    schedule: &MiningSchedule,
    retriever: &mut dyn MiningRetriever,
    questions: &[Question],
    io: MiningIo<'_>,
    dry_run: bool,
) -> Result<MiningReport, MiningError> {
    schedule.validate()?;
    if !dry_run && schedule.iterations > 0 && io.trainer.is_none() {
        return Err(MiningError::TrainerUnavailable("no trainer connected and dry run not requested".into()));
    }
    let mut report =
        MiningReport { schedule: *schedule, planned_steps: schedule.planned_steps(), dry_run, iterations: Vec::new() };
    for iteration in 0..schedule.iterations {
        let retrieved = retriever
            .retrieve(questions, schedule.top_k)
            .map_err(|message| MiningError::RetrievalFailure { iteration, message })?;
        let triplets = mine_triplets(questions, &retrieved, iteration, schedule)?;
        let path = (io.sink)(iteration, &triplets)?;
        let questions_with_triplets = triplets.iter().map(|t| &t.question_id).collect::<HashSet<_>>().len();
        let mut trainer_batches = 0;
        if !dry_run {
            let trainer = io.trainer.expect("checked above");
            let command = TrainCommand {
                profile: io.profile.clone(),
                data_path: path,
                export_path: (io.export_path)(iteration),
                batches: schedule.batches_per_iter,
                batch_size: schedule.batch_size,
                iteration,
            };
            trainer.train(&command).map_err(|source| MiningError::TrainerFailure { iteration, source })?;
            trainer_batches = schedule.batches_per_iter;
            retriever.reload(iteration).map_err(|message| MiningError::RetrievalFailure { iteration, message })?;
        }
        log::info!("mining iteration {iteration}: {} triplets", triplets.len());
        report.iterations.push(IterationRecord {
            iteration,
            triplets: triplets.len(),
            questions_with_triplets,
            trainer_batches,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: &str) -> PassageRef {
        PassageRef::new("d", p)
    }

    fn list(ids: &[&str]) -> RankedList {
        let n = ids.len();
        RankedList::from_scored("q", "dense", ids.iter().enumerate().map(|(i, p)| (r(p), (n - i) as f64)).collect(), n)
    }

    fn q(gold: &[&str]) -> Question {
        Question { question_id: "q".into(), text: "t".into(), gold_refs: gold.iter().map(|p| r(p)).collect() }
    }

    fn sched(top_k: usize, cap: usize) -> MiningSchedule {
        MiningSchedule { top_k, batches_per_iter: 1, iterations: 1, batch_size: cap }
    }

    #[test]
    fn gold_first_pairs_with_rest() {
        let m = HashMap::from([("q".to_string(), list(&["G", "d1", "d2"]))]);
        let t = mine_triplets(&[q(&["G"])], &m, 0, &sched(3, 8)).unwrap();
        let negs: Vec<_> = t.iter().map(|t| t.negative_ref.passage_id.as_str()).collect();
        assert_eq!(negs, ["d1", "d2"]);
        assert!(t.iter().all(|t| t.positive_ref == r("G")));
    }

    #[test]
    fn all_gold_yields_nothing() {
        let m = HashMap::from([("q".to_string(), list(&["G1", "G2"]))]);
        assert!(mine_triplets(&[q(&["G1", "G2"])], &m, 0, &sched(2, 8)).unwrap().is_empty());
    }

    #[test]
    fn gold_at_rank_four() {
        let ids = ["n1", "n2", "n3", "G", "n5", "n6", "n7", "n8", "n9", "n10"];
        let m = HashMap::from([("q".to_string(), list(&ids))]);
        let t = mine_triplets(&[q(&["G"])], &m, 0, &sched(10, 5)).unwrap();
        let negs: Vec<_> = t.iter().map(|t| t.negative_ref.passage_id.as_str()).collect();
        assert_eq!(negs, ["n1", "n2", "n3", "n5", "n6"]);
    }

    #[test]
    fn no_gold_in_top_k_falls_back() {
        let m = HashMap::from([("q".to_string(), list(&["a", "b", "c", "G"]))]);
        let t = mine_triplets(&[q(&["G"])], &m, 0, &sched(2, 8)).unwrap();
        let negs: Vec<_> = t.iter().map(|t| t.negative_ref.passage_id.as_str()).collect();
        assert_eq!(negs, ["a", "b"]);
    }

    #[test]
    fn schedule_defaults() {
        assert_eq!(MiningSchedule::default().planned_steps(), 80_000);
        assert!(MiningSchedule { top_k: 0, ..Default::default() }.validate().is_err());
    }
}
