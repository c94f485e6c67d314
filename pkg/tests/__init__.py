"""Tests du pipeline ConDA-TTA"""
