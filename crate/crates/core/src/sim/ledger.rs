use std::collections::BTreeMap;

use crate::codec::{CodecError, Fixed};

/// Value accounting for the simulated network. Every movement is a
/// transfer between these buckets, so
/// `bonds + payouts + slashed + escrow + refunded == inflow` always holds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ledger {
    pub bonds: BTreeMap<String, Fixed>,
    pub payouts: BTreeMap<String, Fixed>,
    pub slashed: Fixed,
    /// Task rewards awaiting settlement.
    pub escrow: Fixed,
    /// Rewards returned to the funder after failed settlements.
    pub refunded: Fixed,
    /// Everything that ever entered: bonds, rewards, dispute bonds.
    pub inflow: Fixed,
}

fn add(a: Fixed, b: Fixed) -> Result<Fixed, CodecError> {
    a.checked_add(b)
}

fn sub(a: Fixed, b: Fixed) -> Result<Fixed, CodecError> {
    a.checked_sub(b)
}

impl Ledger {
    pub fn bond(&self, op: &str) -> Fixed {
        self.bonds.get(op).copied().unwrap_or(Fixed::ZERO)
    }

    pub fn payout(&self, op: &str) -> Fixed {
        self.payouts.get(op).copied().unwrap_or(Fixed::ZERO)
    }

    pub fn conserved(&self) -> bool {
        let held = crate::codec::checked_sum(
            self.bonds
                .values()
                .chain(self.payouts.values())
                .copied()
                .chain([self.slashed, self.escrow, self.refunded]),
        );
        held == Ok(self.inflow)
    }

    pub(crate) fn deposit_bond(&mut self, op: &str, amount: Fixed) -> Result<(), CodecError> {
        self.inflow = add(self.inflow, amount)?;
        self.bonds.insert(op.into(), add(self.bond(op), amount)?);
        Ok(())
    }

    pub(crate) fn fund_reward(&mut self, amount: Fixed) -> Result<(), CodecError> {
        self.inflow = add(self.inflow, amount)?;
        self.escrow = add(self.escrow, amount)?;
        Ok(())
    }

    pub(crate) fn refund_reward(&mut self, amount: Fixed) -> Result<(), CodecError> {
        self.escrow = sub(self.escrow, amount)?;
        self.refunded = add(self.refunded, amount)?;
        Ok(())
    }

    pub(crate) fn pay(&mut self, op: &str, amount: Fixed) -> Result<(), CodecError> {
        self.escrow = sub(self.escrow, amount)?;
        self.payouts.insert(op.into(), add(self.payout(op), amount)?);
        Ok(())
    }

    pub(crate) fn claw_back(&mut self, op: &str, amount: Fixed) -> Result<(), CodecError> {
        self.payouts.insert(op.into(), sub(self.payout(op), amount)?);
        self.escrow = add(self.escrow, amount)?;
        Ok(())
    }

    /// Moves `fraction` of the operator's current bond to the slashed pool.
    pub(crate) fn slash(&mut self, op: &str, fraction: Fixed) -> Result<Fixed, CodecError> {
        let bond = self.bond(op);
        let amount = bond.checked_mul(fraction)?.min(bond);
        self.bonds.insert(op.into(), sub(bond, amount)?);
        self.slashed = add(self.slashed, amount)?;
        Ok(amount)
    }

    pub(crate) fn restore(&mut self, op: &str, amount: Fixed) -> Result<(), CodecError> {
        self.slashed = sub(self.slashed, amount)?;
        self.bonds.insert(op.into(), add(self.bond(op), amount)?);
        Ok(())
    }

    pub(crate) fn forfeit_dispute_bond(&mut self, amount: Fixed) -> Result<(), CodecError> {
        self.inflow = add(self.inflow, amount)?;
        self.slashed = add(self.slashed, amount)?;
        Ok(())
    }
}
