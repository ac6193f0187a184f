//! [`SlabComm`] over a transport endpoint.

use tomoforge_core::solver::{Halos, SlabComm};
use tomoforge_core::{Result, TomoError};

use crate::partition::SlabPartition;
use crate::transport::{Endpoint, Message, MessageKind, TransportError};

pub struct TransportComm<E: Endpoint> {
    endpoint: E,
    slab: SlabPartition,
}

impl<E: Endpoint> TransportComm<E> {
    pub fn new(endpoint: E, slab: SlabPartition) -> Self {
        debug_assert_eq!(endpoint.worker(), slab.worker_id);
        Self { endpoint, slab }
    }

    pub fn endpoint(&self) -> &E {
        &self.endpoint
    }

    fn expect(&mut self, from: usize, iteration: usize, kind: MessageKind, len: Option<usize>) -> std::result::Result<Vec<f64>, TransportError> {
        let msg = self.endpoint.recv(from)?;
        if msg.iteration != iteration || msg.kind != kind {
            return Err(TransportError::Protocol(format!(
                "worker {} expected {kind:?} for iteration {iteration} from {from}, got {:?} for iteration {}",
                self.slab.worker_id, msg.kind, msg.iteration
            )));
        }
        if let Some(len) = len {
            if msg.payload.len() != len {
                return Err(TransportError::Protocol(format!(
                    "halo plane from worker {from} has {} values, expected {len}",
                    msg.payload.len()
                )));
            }
        }
        Ok(msg.payload)
    }

    fn send(&mut self, to: usize, iteration: usize, kind: MessageKind, payload: Vec<f64>) -> std::result::Result<(), TransportError> {
        let from = self.slab.worker_id;
        self.endpoint.send(
            to,
            Message {
                from,
                iteration,
                kind,
                payload,
            },
        )
    }

    fn exchange_inner(&mut self, iteration: usize, first: &[f64], last: &[f64]) -> std::result::Result<Halos, TransportError> {
        let plane = first.len();
        let (lower, upper) = (self.slab.lower, self.slab.upper);
        let send_all = |c: &mut Self| -> std::result::Result<(), TransportError> {
            if let Some(l) = lower {
                c.send(l, iteration, MessageKind::HaloUpper, first.to_vec())?;
            }
            if let Some(u) = upper {
                c.send(u, iteration, MessageKind::HaloLower, last.to_vec())?;
            }
            Ok(())
        };
        let recv_all = |c: &mut Self| -> std::result::Result<Halos, TransportError> {
            let lo = lower.map(|l| c.expect(l, iteration, MessageKind::HaloLower, Some(plane))).transpose()?;
            let hi = upper.map(|u| c.expect(u, iteration, MessageKind::HaloUpper, Some(plane))).transpose()?;
            Ok(Halos { lo, hi })
        };
        // neighbours have opposite parity, so a blocking send always meets a
        // receiving peer
        if self.slab.worker_id % 2 == 0 {
            send_all(self)?;
            recv_all(self)
        } else {
            let h = recv_all(self)?;
            send_all(self)?;
            Ok(h)
        }
    }

    fn gather_inner(&mut self, iteration: usize, local: Vec<f64>) -> std::result::Result<Vec<f64>, TransportError> {
        let workers = self.endpoint.workers();
        if self.slab.worker_id == 0 {
            let mut all = local;
            for w in 1..workers {
                all.extend(self.expect(w, iteration, MessageKind::Gather, None)?);
            }
            for w in 1..workers {
                self.send(w, iteration, MessageKind::Broadcast, all.clone())?;
            }
            Ok(all)
        } else {
            self.send(0, iteration, MessageKind::Gather, local)?;
            self.expect(0, iteration, MessageKind::Broadcast, None)
        }
    }
}

fn comm_err(e: TransportError) -> TomoError {
    TomoError::Communication(e.to_string())
}

impl<E: Endpoint> SlabComm for TransportComm<E> {
    fn workers(&self) -> usize {
        self.endpoint.workers()
    }

    fn exchange(&mut self, iteration: usize, first: &[f64], last: &[f64]) -> Result<Halos> {
        self.exchange_inner(iteration, first, last).map_err(comm_err)
    }

    fn all_gather(&mut self, iteration: usize, local: Vec<f64>) -> Result<Vec<f64>> {
        if self.endpoint.workers() == 1 {
            return Ok(local);
        }
        self.gather_inner(iteration, local).map_err(comm_err)
    }
}
