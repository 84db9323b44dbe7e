# Output helpers: result tables and run reports
