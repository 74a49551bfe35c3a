import datetime as dt

import numpy as np

from lockdown_did.ingest import CardType, Channel, PopulationTable, Role, Transaction, TransactionColumns, date_to_day


def columns(rows):
    """TransactionColumns from ``(date, amount, authority[, category[, channel]])`` tuples."""
    txns, auths = [], []
    for r in rows:
        day, amount, auth = r[0], r[1], r[2]
        cat = r[3] if len(r) > 3 else "retail"
        chan = r[4] if len(r) > 4 else Channel.OFFLINE
        txns.append(Transaction("a", day, amount, "GBP", CardType.CONSUMER_CREDIT, chan, cat, "M1 4"))
        auths.append(auth)
    return TransactionColumns.from_pairs(txns, auths)


def daily_columns(start: dt.date, amounts, authority="A"):
    """One transaction per day with the given amounts (zero amounts skipped)."""
    day0 = date_to_day(start)
    amounts = np.asarray(amounts, dtype=np.int64)
    keep = amounts > 0
    n = int(keep.sum())
    return TransactionColumns(
        day=(day0 + np.arange(len(amounts)))[keep].astype(np.int64),
        amount=amounts[keep],
        authority=np.zeros(n, dtype=np.int32),
        authorities=(authority,),
        category=np.zeros(n, dtype=np.int32),
        categories=("retail",),
        channel=np.ones(n, dtype=np.int8),
    )


def group(*authorities, role=Role.TREATMENT, pops=None):
    pops = pops or {a: 100_000 for a in authorities}
    table = PopulationTable(dict(pops), {a: "R" for a in pops})
    return table.group("+".join(authorities), authorities, role)
