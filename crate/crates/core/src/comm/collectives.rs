use super::{tags, AllreduceAlgorithm, CommError, Communicator, WireElement};
use crate::tensor::Scalar;

impl Communicator {
    fn relative(&self, root: usize) -> usize {
        (self.rank + self.size - root) % self.size
    }

    fn absolute(&self, root: usize, relative: usize) -> usize {
        (relative + root) % self.size
    }

    fn check_root(&self, root: usize) -> Result<(), CommError> {
        if root >= self.size {
            return Err(CommError::InvalidRank {
                rank: root,
                size: self.size,
            });
        }
        Ok(())
    }

    fn check_len(&self, peer: usize, expected: usize, got: usize) -> Result<(), CommError> {
        if expected != got {
            self.abort();
            return Err(CommError::LengthMismatch {
                peer,
                expected,
                got,
            });
        }
        Ok(())
    }

    /// Returns only after every rank has entered the barrier.
    pub fn barrier(&self) -> Result<(), CommError> {
        let p = self.size;
        let mut dist = 1;
        let mut round = 0;
        while dist < p {
            let tag = tags::BARRIER + round;
            self.send_tagged::<u8>((self.rank + dist) % p, tag, Vec::new())?;
            self.recv_tagged::<u8>((self.rank + p - dist) % p, tag)?;
            dist <<= 1;
            round += 1;
        }
        Ok(())
    }

    /// Binomial-tree broadcast of the root's array. Non-root input is ignored.
    pub fn broadcast<W: WireElement>(
        &self,
        root: usize,
        values: Vec<W>,
    ) -> Result<Vec<W>, CommError> {
        self.check_root(root)?;
        let p = self.size;
        let vr = self.relative(root);
        let mut buf = values;
        let mut mask = 1;
        while mask < p {
            if vr & mask != 0 {
                buf = self.recv_tagged(self.absolute(root, vr - mask), tags::BCAST)?;
                break;
            }
            mask <<= 1;
        }
        mask >>= 1;
        while mask > 0 {
            if vr + mask < p {
                self.send_tagged(self.absolute(root, vr + mask), tags::BCAST, buf.clone())?;
            }
            mask >>= 1;
        }
        Ok(buf)
    }

    /// Binomial-tree elementwise sum delivered to `root`; other ranks get
    /// `None`. The combination order depends only on ranks, so the result is
    /// reproducible bit for bit.
    pub fn reduce_sum<T: Scalar>(
        &self,
        root: usize,
        values: &[T],
    ) -> Result<Option<Vec<T>>, CommError> {
        self.check_root(root)?;
        let p = self.size;
        let vr = self.relative(root);
        let mut acc = values.to_vec();
        let mut mask = 1;
        while mask < p {
            if vr & mask != 0 {
                self.send_tagged(self.absolute(root, vr - mask), tags::REDUCE, acc)?;
                return Ok(None);
            }
            if vr + mask < p {
                let peer = self.absolute(root, vr + mask);
                let other: Vec<T> = self.recv_tagged(peer, tags::REDUCE)?;
                self.check_len(peer, acc.len(), other.len())?;
                for (a, &o) in acc.iter_mut().zip(&other) {
                    *a += o;
                }
            }
            mask <<= 1;
        }
        Ok(Some(acc))
    }

    /// Elementwise sum over all ranks using the configured algorithm.
    pub fn allreduce_sum<T: Scalar>(&self, values: &[T]) -> Result<Vec<T>, CommError> {
        self.allreduce_sum_with(self.config.algorithm, values)
    }

    pub fn allreduce_sum_with<T: Scalar>(
        &self,
        algorithm: AllreduceAlgorithm,
        values: &[T],
    ) -> Result<Vec<T>, CommError> {
        match algorithm {
            AllreduceAlgorithm::Deterministic => {
                let reduced = self.reduce_sum(0, values)?;
                self.broadcast(0, reduced.unwrap_or_default())
            }
            AllreduceAlgorithm::RecursiveDoubling => self.recursive_doubling(values),
        }
    }

    /// [`allreduce_sum`](Self::allreduce_sum) divided by the group size.
    pub fn allreduce_average<T: Scalar>(&self, values: &[T]) -> Result<Vec<T>, CommError> {
        self.allreduce_average_with(self.config.algorithm, values)
    }

    pub fn allreduce_average_with<T: Scalar>(
        &self,
        algorithm: AllreduceAlgorithm,
        values: &[T],
    ) -> Result<Vec<T>, CommError> {
        let mut sum = self.allreduce_sum_with(algorithm, values)?;
        let p = T::from_f64(self.size as f64);
        for v in sum.iter_mut() {
            *v /= p;
        }
        Ok(sum)
    }

    fn recursive_doubling<T: Scalar>(&self, values: &[T]) -> Result<Vec<T>, CommError> {
        let p = self.size;
        let rank = self.rank;
        let mut acc = values.to_vec();
        if p == 1 {
            return Ok(acc);
        }
        let pof2 = 1usize << (usize::BITS - 1 - p.leading_zeros());
        let rem = p - pof2;

        // Fold: among the first 2*rem ranks, even ranks hand their data to
        // the next odd rank and sit out the exchange phase.
        let folded_rank = if rank < 2 * rem {
            if rank.is_multiple_of(2) {
                self.send_tagged(rank + 1, tags::RD_FOLD, acc.clone())?;
                self.bump(|s| s.fold_steps += 1);
                None
            } else {
                let other: Vec<T> = self.recv_tagged(rank - 1, tags::RD_FOLD)?;
                self.check_len(rank - 1, acc.len(), other.len())?;
                for (a, &o) in acc.iter_mut().zip(&other) {
                    *a = o + *a;
                }
                self.bump(|s| s.fold_steps += 1);
                Some(rank / 2)
            }
        } else {
            Some(rank - rem)
        };

        if let Some(new_rank) = folded_rank {
            let mut mask = 1;
            while mask < pof2 {
                let partner_new = new_rank ^ mask;
                let partner = if partner_new < rem {
                    partner_new * 2 + 1
                } else {
                    partner_new + rem
                };
                self.send_tagged(partner, tags::RD_EXCHANGE, acc.clone())?;
                let other: Vec<T> = self.recv_tagged(partner, tags::RD_EXCHANGE)?;
                self.check_len(partner, acc.len(), other.len())?;
                // lower rank's contribution always on the left
                if partner < rank {
                    for (a, &o) in acc.iter_mut().zip(&other) {
                        *a = o + *a;
                    }
                } else {
                    for (a, &o) in acc.iter_mut().zip(&other) {
                        *a += o;
                    }
                }
                self.bump(|s| s.exchange_rounds += 1);
                mask <<= 1;
            }
        }

        if rank < 2 * rem {
            if rank % 2 == 1 {
                self.send_tagged(rank - 1, tags::RD_UNFOLD, acc.clone())?;
            } else {
                acc = self.recv_tagged(rank + 1, tags::RD_UNFOLD)?;
            }
            self.bump(|s| s.fold_steps += 1);
        }
        Ok(acc)
    }

    /// Collects every rank's array at `root`, in rank order.
    pub fn gather<W: WireElement>(
        &self,
        root: usize,
        values: &[W],
    ) -> Result<Option<Vec<Vec<W>>>, CommError> {
        self.check_root(root)?;
        if self.rank != root {
            self.send_tagged(root, tags::GATHER, values.to_vec())?;
            return Ok(None);
        }
        let mut all = Vec::with_capacity(self.size);
        for r in 0..self.size {
            if r == root {
                all.push(values.to_vec());
            } else {
                all.push(self.recv_tagged(r, tags::GATHER)?);
            }
        }
        Ok(Some(all))
    }
}
