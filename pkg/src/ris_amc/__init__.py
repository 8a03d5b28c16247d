"""RIS-assisted automatic modulation classification, simulated end to end."""
