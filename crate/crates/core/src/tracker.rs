//! Gaussian event-cluster tracking of LED markers.
//!
//! Each marker is a cluster of recent events modeled by a 2-D Gaussian with
//! diagonal covariance. An incoming event joins the closest cluster by
//! Mahalanobis distance if that distance is strictly below `d_th`; members
//! older than `t_su` relative to the cluster's newest event are dropped.
//! Cluster statistics are kept as exact integer moment sums, so the mean and
//! variance always equal a batch recomputation over the current members.

use std::collections::{HashMap, HashSet, VecDeque};

use log::warn;

use crate::error::{Error, Result};
use crate::event::Event;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    /// Mahalanobis gate.
    pub d_th: f64,
    /// Member lifetime, microseconds.
    pub t_su: u64,
    /// Lower bound on each axis variance, px^2.
    pub var_floor: f64,
    /// Trajectory sampling period, microseconds.
    pub sample_period: u64,
    /// Minimum events for a seed component.
    pub min_seed_events: usize,
    /// Length of the stream prefix used for seeding, microseconds.
    pub seed_window: u64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self::for_blink(100.0)
    }
}

impl TrackerParams {
    /// Lifetime of one blink period, seeding over two.
    pub fn for_blink(f_led: f64) -> Self {
        let period = (1e6 / f_led).round() as u64;
        Self {
            d_th: 3.0,
            t_su: period,
            var_floor: 0.25,
            sample_period: 1000,
            min_seed_events: 20,
            seed_window: 2 * period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_th > 0.0) || self.t_su == 0 || self.sample_period == 0 || !(self.var_floor > 0.0) {
            return Err(Error::InvalidParam(format!(
                "tracker needs d_th, t_su, sample_period, var_floor > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Member {
    pub x: u16,
    pub y: u16,
    pub t: u64,
}

impl From<&Event> for Member {
    fn from(e: &Event) -> Self {
        Self { x: e.x, y: e.y, t: e.t }
    }
}

/// Running Gaussian model of one marker's event cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub marker_id: u32,
    members: VecDeque<Member>,
    sum_x: i64,
    sum_y: i64,
    sum_xx: i64,
    sum_yy: i64,
    mean: (f64, f64),
    var_x: f64,
    var_y: f64,
    t_new: u64,
    var_floor: f64,
}

impl ClusterState {
    /// Builds a cluster from time-ordered members. Panics on an empty set.
    pub fn from_members(marker_id: u32, members: impl IntoIterator<Item = Member>, var_floor: f64) -> Self {
        let mut c = Self {
            marker_id,
            members: VecDeque::new(),
            sum_x: 0,
            sum_y: 0,
            sum_xx: 0,
            sum_yy: 0,
            mean: (0.0, 0.0),
            var_x: var_floor,
            var_y: var_floor,
            t_new: 0,
            var_floor,
        };
        for m in members {
            c.add(m);
        }
        assert!(!c.members.is_empty(), "cluster needs at least one member");
        c.refresh();
        c
    }

    pub fn mean(&self) -> (f64, f64) {
        self.mean
    }

    pub fn var_x(&self) -> f64 {
        self.var_x
    }

    pub fn var_y(&self) -> f64 {
        self.var_y
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn t_new(&self) -> u64 {
        self.t_new
    }

    pub fn members(&self) -> impl ExactSizeIterator<Item = &Member> {
        self.members.iter()
    }

    fn add(&mut self, m: Member) {
        let (x, y) = (m.x as i64, m.y as i64);
        self.sum_x += x;
        self.sum_y += y;
        self.sum_xx += x * x;
        self.sum_yy += y * y;
        self.t_new = self.t_new.max(m.t);
        self.members.push_back(m);
    }

    fn remove_front(&mut self) {
        if let Some(m) = self.members.pop_front() {
            let (x, y) = (m.x as i64, m.y as i64);
            self.sum_x -= x;
            self.sum_y -= y;
            self.sum_xx -= x * x;
            self.sum_yy -= y * y;
        }
    }

    fn refresh(&mut self) {
        let n = self.members.len() as i64;
        let var = |s: i64, ss: i64| {
            let num = n as i128 * ss as i128 - (s as i128) * (s as i128);
            num as f64 / (n as f64 * n as f64)
        };
        self.mean = (self.sum_x as f64 / n as f64, self.sum_y as f64 / n as f64);
        self.var_x = var(self.sum_x, self.sum_xx).max(self.var_floor);
        self.var_y = var(self.sum_y, self.sum_yy).max(self.var_floor);
    }
}

pub fn mahalanobis(point: (f64, f64), cluster: &ClusterState) -> f64 {
    let dx = point.0 - cluster.mean.0;
    let dy = point.1 - cluster.mean.1;
    (dx * dx / cluster.var_x + dy * dy / cluster.var_y).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admission {
    /// Joined the cluster at this index of the slice.
    Joined { cluster: usize, distance: f64 },
    Rejected,
}

/// Gates `event` into the closest cluster with distance `< d_th` (ties go
/// to the lowest marker id) and updates its statistics.
pub fn admit_event(event: &Event, clusters: &mut [ClusterState], params: &TrackerParams) -> Admission {
    let point = (event.x as f64, event.y as f64);
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in clusters.iter().enumerate() {
        let d = mahalanobis(point, c);
        if d >= params.d_th {
            continue;
        }
        let better = match best {
            None => true,
            Some((j, bd)) => d < bd || (d == bd && c.marker_id < clusters[j].marker_id),
        };
        if better {
            best = Some((i, d));
        }
    }
    match best {
        Some((i, distance)) => {
            let c = &mut clusters[i];
            c.add(Member::from(event));
            c.refresh();
            Admission::Joined { cluster: i, distance }
        }
        None => Admission::Rejected,
    }
}

/// Drops members older than `t_su` relative to `now`, always keeping the newest.
pub fn expire_members(cluster: &mut ClusterState, now: u64, params: &TrackerParams) {
    let before = cluster.members.len();
    while cluster.members.len() > 1 && now.saturating_sub(cluster.members[0].t) > params.t_su {
        cluster.remove_front();
    }
    if cluster.members.len() != before {
        cluster.refresh();
    }
}

/// Seeds one cluster per marker from 8-connected components of the pixels
/// active in `prefix`. Components are ranked by event count; the
/// `expected_markers` largest become clusters, numbered left to right.
pub fn seed_clusters(prefix: &[Event], expected_markers: usize, params: &TrackerParams) -> Result<Vec<ClusterState>> {
    let mut by_pixel: HashMap<(u16, u16), Vec<Member>> = HashMap::new();
    for e in prefix {
        by_pixel.entry((e.x, e.y)).or_default().push(Member::from(e));
    }
    let mut pixels: Vec<(u16, u16)> = by_pixel.keys().copied().collect();
    pixels.sort_unstable();
    let mut visited: HashSet<(u16, u16)> = HashSet::new();
    let mut components: Vec<Vec<Member>> = Vec::new();
    for &start in &pixels {
        if !visited.insert(start) {
            continue;
        }
        let mut stack = vec![start];
        let mut members = Vec::new();
        while let Some((x, y)) = stack.pop() {
            members.extend_from_slice(&by_pixel[&(x, y)]);
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                    if nx < 0 || ny < 0 || nx > u16::MAX as i32 || ny > u16::MAX as i32 {
                        continue;
                    }
                    let n = (nx as u16, ny as u16);
                    if by_pixel.contains_key(&n) && visited.insert(n) {
                        stack.push(n);
                    }
                }
            }
        }
        if members.len() >= params.min_seed_events.max(1) {
            components.push(members);
        }
    }
    if components.len() < expected_markers || expected_markers == 0 {
        return Err(Error::InsufficientMarkers {
            found: components.len(),
            expected: expected_markers,
        });
    }
    // stable: equal sizes keep pixel-scan order
    components.sort_by_key(|c| std::cmp::Reverse(c.len()));
    components.truncate(expected_markers);
    let mut clusters: Vec<ClusterState> = components
        .into_iter()
        .map(|mut members| {
            members.sort_by_key(|m| (m.t, m.y, m.x));
            ClusterState::from_members(0, members, params.var_floor)
        })
        .collect();
    clusters.sort_by(|a, b| a.mean.0.total_cmp(&b.mean.0).then(a.mean.1.total_cmp(&b.mean.1)));
    for (i, c) in clusters.iter_mut().enumerate() {
        c.marker_id = i as u32;
    }
    Ok(clusters)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterSample {
    pub t: u64,
    pub u: f64,
    pub v: f64,
    /// No event admitted for more than `10 * t_su` before this sample.
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CenterTrajectory {
    pub marker_id: u32,
    pub samples: Vec<CenterSample>,
}

impl CenterTrajectory {
    pub fn fresh_samples(&self) -> impl Iterator<Item = &CenterSample> {
        self.samples.iter().filter(|s| !s.stale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub trajectories: Vec<CenterTrajectory>,
    pub clusters: Vec<ClusterState>,
    pub admitted: usize,
    /// Events no cluster accepted, including unused seed-window events.
    pub discarded: usize,
    pub warnings: Vec<String>,
}

/// Seeds on the first `seed_window` of `events`, then consumes the rest in
/// order and samples every cluster mean on the grid `k * sample_period`.
pub fn track(events: &[Event], params: &TrackerParams, expected_markers: usize) -> Result<TrackOutput> {
    params.validate()?;
    if events.is_empty() {
        return Ok(TrackOutput {
            trajectories: (0..expected_markers as u32)
                .map(|marker_id| CenterTrajectory {
                    marker_id,
                    samples: vec![],
                })
                .collect(),
            clusters: vec![],
            admitted: 0,
            discarded: 0,
            warnings: vec![],
        });
    }
    let seed_end = events[0].t + params.seed_window;
    let split = events.partition_point(|e| e.t < seed_end);
    let mut clusters = seed_clusters(&events[..split], expected_markers, params)?;
    let seeded: usize = clusters.iter().map(ClusterState::n).sum();

    let mut trajectories: Vec<CenterTrajectory> = clusters
        .iter()
        .map(|c| CenterTrajectory {
            marker_id: c.marker_id,
            samples: vec![],
        })
        .collect();
    let stale_after = params.t_su.saturating_mul(10);
    let mut was_stale = vec![false; clusters.len()];
    let mut warnings = Vec::new();
    let sp = params.sample_period;
    let mut next_sample = seed_end.div_ceil(sp) * sp;
    let mut emit = |t: u64, clusters: &[ClusterState], trajectories: &mut [CenterTrajectory]| {
        for (i, c) in clusters.iter().enumerate() {
            let stale = t.saturating_sub(c.t_new) > stale_after;
            if stale && !was_stale[i] {
                let msg = format!(
                    "marker {} starved: no admitted events since t = {} us (sample t = {} us)",
                    c.marker_id, c.t_new, t
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            was_stale[i] = stale;
            trajectories[i].samples.push(CenterSample {
                t,
                u: c.mean.0,
                v: c.mean.1,
                stale,
            });
        }
    };

    let mut admitted = 0;
    for e in &events[split..] {
        while e.t > next_sample {
            emit(next_sample, &clusters, &mut trajectories);
            next_sample += sp;
        }
        if let Admission::Joined { cluster, .. } = admit_event(e, &mut clusters, params) {
            admitted += 1;
            let now = clusters[cluster].t_new;
            expire_members(&mut clusters[cluster], now, params);
        }
    }
    let last = events[events.len() - 1].t;
    while next_sample <= last {
        emit(next_sample, &clusters, &mut trajectories);
        next_sample += sp;
    }
    Ok(TrackOutput {
        trajectories,
        clusters,
        admitted,
        discarded: events.len() - admitted - seeded,
        warnings,
    })
}
