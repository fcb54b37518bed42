# Multi-modal Entity Alignment
