"""Privacy-preserving federated itemset mining over simulated heterogeneous clouds.

The pipeline: transaction databases are vertically partitioned into
integrity-digested fragments held by simulated parties, frequent itemsets are
counted across parties with a commutative-masking ring protocol, an MDL code
table is assembled and pruned into one global model, and user queries are
answered from that model (or exactly from fragments) with authenticated
encryption of the result.
"""

__version__ = "0.1.0"
