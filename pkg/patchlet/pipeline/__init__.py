# Dataset ingestion, training loop, checkpoints, export and metrics
