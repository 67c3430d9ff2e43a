"""GCX token ledger: supply, staking, slashing, fees and yield.

The ledger is the only authority over token quantities.  Stable
currency lives in clearing accounts; operations that move stable value
(fees, yield) return transfer records for the engine to apply.

Supply identity, checked after every mutation:
    cumulative_issued == total_supply + cumulative_burned
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping, Optional

from .errors import CapExceeded, ExceedsStake, Insufficient, LockedByObligations
from .numerics import ONE, ZERO, dec, dsum, pro_rata, quantize

TREASURY = "exchange"

BPS = Decimal(10_000)


@dataclass(frozen=True)
class TokenConfig:
    supply_cap: Decimal = dec(1_000_000_000)
    fee_bps: Decimal = dec(10)            # trading fee on notional
    burn_bps: Decimal = dec(1_000)        # share of each fee bought and burned
    seat_threshold: Decimal = dec(1_000)  # staked tokens for a member seat
    seat_discount: Decimal = dec("0.5")   # fraction off the fee with a seat
    slash_compensation_share: Decimal = dec("0.5")  # rest is burned
    performance_burn_rate: Decimal = dec(2)         # tokens per missed delivery
    yield_fraction: Decimal = dec("0.5")  # share of fee pool paid per period
    reputation_bonus: bool = True         # weight yield by (100 + score) / 100

    def __post_init__(self):
        for name in ("supply_cap", "fee_bps", "burn_bps", "seat_threshold",
                     "seat_discount", "slash_compensation_share",
                     "performance_burn_rate", "yield_fraction"):
            object.__setattr__(self, name, dec(getattr(self, name)))


@dataclass(frozen=True)
class SlashRecord:
    account_id: str
    slashed: Decimal
    burned: Decimal
    compensation: Decimal
    beneficiary: Optional[str]


@dataclass(frozen=True)
class FeeRecord:
    account_id: str
    notional: Decimal
    fee: Decimal                 # stable currency owed by the account
    seat_discount_applied: bool
    tokens_burned: Decimal       # burn leg, bought from the treasury
    pool_accrual: Decimal        # stable added to the fee pool


@dataclass(frozen=True)
class YieldTransfer:
    contributor: str
    amount: Decimal   # stable currency


class InsuranceFund:
    """Safety-net fund: stable contributions plus staked guarantor tokens.

    Contributor shares always sum exactly to the stable balance; draws
    scale every share down pro-rata.
    """

    def __init__(self):
        self.stable_balance = ZERO
        self.token_balance = ZERO
        self.shares: dict[str, Decimal] = {}

    def contribute(self, contributor: str, amount: Decimal) -> None:
        amount = dec(amount)
        if amount < 0:
            raise ValueError("contribution must be >= 0")
        self.stable_balance += amount
        self.shares[contributor] = self.shares.get(contributor, ZERO) + amount

    def draw(self, amount: Decimal) -> Decimal:
        """Take up to ``amount`` of stable cover; returns the amount drawn."""
        drawn = min(dec(amount), self.stable_balance)
        if drawn <= 0:
            return ZERO
        self.stable_balance -= drawn
        contributors = sorted(self.shares)
        cuts = pro_rata(drawn, [self.shares[c] for c in contributors])
        for contributor, cut in zip(contributors, cuts):
            self.shares[contributor] -= cut
        return drawn


class TokenLedger:
    def __init__(self, config: TokenConfig = TokenConfig()):
        self.config = config
        self.balances: dict[str, Decimal] = {}
        self.staked: dict[str, Decimal] = {}
        self.locked: dict[str, Decimal] = {}   # slash exposure per account
        self.cumulative_issued = ZERO
        self.cumulative_burned = ZERO
        self.fee_pool = ZERO                   # stable, awaiting distribution
        self.fund = InsuranceFund()

    # -- views ---------------------------------------------------------

    def balance(self, account_id: str) -> Decimal:
        return self.balances.get(account_id, ZERO)

    def staked_of(self, account_id: str) -> Decimal:
        return self.staked.get(account_id, ZERO)

    def locked_of(self, account_id: str) -> Decimal:
        return self.locked.get(account_id, ZERO)

    @property
    def total_supply(self) -> Decimal:
        return (dsum(self.balances.values()) + dsum(self.staked.values())
                + self.fund.token_balance)

    def check_supply_identity(self) -> None:
        assert self.cumulative_issued == self.total_supply + self.cumulative_burned, \
            "token supply identity violated"

    def has_seat(self, account_id: str) -> bool:
        return self.staked_of(account_id) >= self.config.seat_threshold

    # -- mutations -----------------------------------------------------

    def mint_initial(self, account_id: str, amount: Decimal) -> None:
        """Genesis allocation straight to an account balance."""
        amount = dec(amount)
        if self.total_supply + amount > self.config.supply_cap:
            raise CapExceeded("genesis allocation exceeds supply cap")
        self.balances[account_id] = self.balance(account_id) + amount
        self.cumulative_issued += amount
        self.check_supply_identity()

    def issue(self, amount: Decimal) -> None:
        """Mint new tokens into the exchange treasury, bounded by the cap."""
        amount = dec(amount)
        if amount < 0:
            raise ValueError("issue amount must be >= 0")
        if self.total_supply + amount > self.config.supply_cap:
            raise CapExceeded(
                f"issuing {amount} would exceed cap {self.config.supply_cap}")
        if amount == 0:
            return
        self.balances[TREASURY] = self.balance(TREASURY) + amount
        self.cumulative_issued += amount
        self.check_supply_identity()

    def transfer(self, src: str, dst: str, amount: Decimal) -> None:
        amount = dec(amount)
        if amount < 0:
            raise ValueError("transfer amount must be >= 0")
        if self.balance(src) < amount:
            raise Insufficient(f"{src} holds {self.balance(src)}, needs {amount}")
        self.balances[src] -= amount
        self.balances[dst] = self.balance(dst) + amount

    def stake(self, account_id: str, amount: Decimal) -> None:
        amount = dec(amount)
        if amount < 0:
            raise ValueError("stake amount must be >= 0")
        if self.balance(account_id) < amount:
            raise Insufficient(
                f"{account_id} holds {self.balance(account_id)}, needs {amount}")
        self.balances[account_id] -= amount
        self.staked[account_id] = self.staked_of(account_id) + amount
        self.check_supply_identity()

    def unstake(self, account_id: str, amount: Decimal) -> None:
        amount = dec(amount)
        if amount < 0:
            raise ValueError("unstake amount must be >= 0")
        if self.staked_of(account_id) < amount:
            raise Insufficient(
                f"{account_id} staked {self.staked_of(account_id)}, needs {amount}")
        if self.staked_of(account_id) - amount < self.locked_of(account_id):
            raise LockedByObligations(
                f"{account_id} must keep {self.locked_of(account_id)} staked")
        self.staked[account_id] -= amount
        self.balances[account_id] = self.balance(account_id) + amount
        self.check_supply_identity()

    def fund_stake(self, account_id: str, amount: Decimal) -> None:
        """Move tokens from an account's balance into the insurance fund."""
        amount = dec(amount)
        if amount < 0:
            raise ValueError("fund stake must be >= 0")
        if self.balance(account_id) < amount:
            raise Insufficient(
                f"{account_id} holds {self.balance(account_id)}, needs {amount}")
        self.balances[account_id] -= amount
        self.fund.token_balance += amount
        self.check_supply_identity()

    def fund_acquire_stake(self, account_id: str, tokens: Decimal) -> None:
        """Move staked tokens into the insurance fund (a buy at the mark;
        the stable leg is the caller's responsibility)."""
        tokens = dec(tokens)
        if tokens < 0 or tokens > self.staked_of(account_id):
            raise ExceedsStake(
                f"cannot acquire {tokens} of {self.staked_of(account_id)} staked")
        self.staked[account_id] -= tokens
        self.release(account_id, tokens)
        self.fund.token_balance += tokens
        self.check_supply_identity()

    def fund_unstake(self, account_id: str, amount: Decimal) -> None:
        amount = dec(amount)
        if amount < 0 or amount > self.fund.token_balance:
            raise Insufficient(f"fund holds {self.fund.token_balance} tokens")
        self.fund.token_balance -= amount
        self.balances[account_id] = self.balance(account_id) + amount
        self.check_supply_identity()

    def lock(self, account_id: str, amount: Decimal) -> None:
        """Reserve slash exposure for an open obligation."""
        self.locked[account_id] = self.locked_of(account_id) + dec(amount)

    def release(self, account_id: str, amount: Decimal) -> None:
        self.locked[account_id] = max(ZERO, self.locked_of(account_id) - dec(amount))

    def slash(self, account_id: str, amount: Decimal,
              beneficiary: Optional[str] = None,
              compensation_share: Optional[Decimal] = None) -> SlashRecord:
        """Seize staked tokens: compensation share to the injured party's
        balance, remainder burned."""
        amount = dec(amount)
        if amount < 0:
            raise ValueError("slash amount must be >= 0")
        if amount > self.staked_of(account_id):
            raise ExceedsStake(
                f"slash {amount} exceeds stake {self.staked_of(account_id)}")
        if amount == 0:
            return SlashRecord(account_id, ZERO, ZERO, ZERO, beneficiary)
        share = (self.config.slash_compensation_share
                 if compensation_share is None else dec(compensation_share))
        compensation = quantize(amount * share) if beneficiary else ZERO
        burned = amount - compensation
        self.staked[account_id] -= amount
        self.release(account_id, amount)
        if compensation > 0:
            self.balances[beneficiary] = self.balance(beneficiary) + compensation
        self.cumulative_burned += burned
        self.check_supply_identity()
        return SlashRecord(account_id, amount, burned, compensation, beneficiary)

    def charge_fee(self, account_id: str, notional: Decimal,
                   token_mark: Decimal) -> FeeRecord:
        """Trading fee on notional, with a buy-and-burn leg.

        The whole fee is owed in stable currency (the engine debits it)
        and lands in the fee pool.  The burn leg re-expresses a burn_bps
        slice of that fee in tokens at ``token_mark`` and burns them from
        the treasury, capped at what the treasury holds.
        """
        notional = dec(notional)
        fee = quantize(notional * self.config.fee_bps / BPS)
        seat = self.has_seat(account_id)
        if seat:
            fee = quantize(fee * (ONE - self.config.seat_discount))
        burn_value = quantize(fee * self.config.burn_bps / BPS)
        tokens_burned = ZERO
        if burn_value > 0 and dec(token_mark) > 0:
            tokens_burned = min(quantize(burn_value / dec(token_mark)),
                                self.balance(TREASURY))
            if tokens_burned > 0:
                self.balances[TREASURY] -= tokens_burned
                self.cumulative_burned += tokens_burned
        self.fee_pool += fee
        self.check_supply_identity()
        return FeeRecord(account_id, notional, fee, seat, tokens_burned,
                         fee - burn_value)

    def performance_burn(self, account_id: str, missed_deliveries: int) -> Decimal:
        """Burn rate x missed deliveries from stake, capped at the stake."""
        if missed_deliveries < 0:
            raise ValueError("missed_deliveries must be >= 0")
        burn = min(self.config.performance_burn_rate * missed_deliveries,
                   self.staked_of(account_id))
        if burn <= 0:
            return ZERO
        self.staked[account_id] -= burn
        self.cumulative_burned += burn
        self.check_supply_identity()
        return burn

    def distribute_yield(self, reputations: Optional[Mapping[str, int]] = None
                         ) -> list[YieldTransfer]:
        """Pay a slice of the fee pool to insurance-fund contributors.

        Pro-rata over contributor shares, optionally weighted up by
        reputation; payouts sum exactly to the distributed amount and the
        rest of the pool rolls over.
        """
        if self.fee_pool <= 0 or not self.fund.shares:
            return []
        amount = quantize(self.fee_pool * self.config.yield_fraction)
        weights: dict[str, Decimal] = {}
        for contributor, share in self.fund.shares.items():
            if share <= 0:
                continue
            weight = share
            if self.config.reputation_bonus and reputations is not None:
                score = reputations.get(contributor, 100)
                weight = share * (100 + score) / 100
            weights[contributor] = weight
        if not weights:
            return []
        contributors = sorted(weights)
        payouts = pro_rata(amount, [weights[c] for c in contributors])
        self.fee_pool -= amount
        return [YieldTransfer(c, a) for c, a in zip(contributors, payouts)]

    def snapshot(self) -> dict:
        """Exportable ledger state (all quantities as canonical strings)."""
        return {
            "total_supply": str(self.total_supply),
            "cumulative_issued": str(self.cumulative_issued),
            "cumulative_burned": str(self.cumulative_burned),
            "fee_pool": str(self.fee_pool),
            "balances": {a: str(b) for a, b in sorted(self.balances.items()) if b != 0},
            "staked": {a: str(s) for a, s in sorted(self.staked.items()) if s != 0},
            "insurance_fund": {
                "stable": str(self.fund.stable_balance),
                "tokens": str(self.fund.token_balance),
                "shares": {c: str(s) for c, s in sorted(self.fund.shares.items())},
            },
        }
