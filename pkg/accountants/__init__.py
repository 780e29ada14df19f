# Accountants package initialization
